#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "mfsim/error.hpp"

namespace mfsim {

namespace detail {
// Exclusive locks currently held by this thread.
inline thread_local int exclusive_depth = 0;
}  // namespace detail

/// Counts writes to store files and how many happened without an exclusive
/// lock held by the writing thread. Tests read it to prove lock discipline.
class LockAudit {
 public:
  static LockAudit& instance() {
    static LockAudit audit;
    return audit;
  }

  void on_write(const std::filesystem::path& path) {
    writes_.fetch_add(1, std::memory_order_relaxed);
    if (detail::exclusive_depth > 0) return;
    unguarded_.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard lock(mutex_);
    offenders_.push_back(path.string());
  }

  std::size_t writes() const { return writes_.load(); }
  std::size_t unguarded() const { return unguarded_.load(); }

  std::vector<std::string> offenders() const {
    std::lock_guard lock(mutex_);
    return offenders_;
  }

  void reset() {
    std::lock_guard lock(mutex_);
    writes_ = 0;
    unguarded_ = 0;
    offenders_.clear();
  }

 private:
  std::atomic<std::size_t> writes_{0};
  std::atomic<std::size_t> unguarded_{0};
  mutable std::mutex mutex_;
  std::vector<std::string> offenders_;
};

/// Advisory lock on a lock file, held for the lifetime of the object.
///
/// Uses flock(2) on a descriptor opened per acquisition, so two threads of one
/// process exclude each other just like two processes do.
class FileLock {
 public:
  enum class Mode { shared, exclusive };

  FileLock(const std::filesystem::path& path, Mode mode) : mode_(mode) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0)
      throw runtime_error("sync-store", "cannot open lock file " + path.string() + ": " + std::strerror(errno));
    const int op = mode == Mode::exclusive ? LOCK_EX : LOCK_SH;
    int rc;
    do {
      rc = ::flock(fd_, op);
    } while (rc != 0 && errno == EINTR);
    if (rc != 0) {
      const int err = errno;
      ::close(fd_);
      if (err == ENOLCK || err == EOPNOTSUPP || err == EINVAL)
        throw runtime_error("sync-store", "advisory file locks are unavailable on this platform/filesystem; refusing to run");
      throw runtime_error("sync-store", "flock failed on " + path.string() + ": " + std::strerror(err));
    }
    if (mode_ == Mode::exclusive) ++detail::exclusive_depth;
  }

  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

  ~FileLock() {
    if (mode_ == Mode::exclusive) --detail::exclusive_depth;
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
  Mode mode_;
};

namespace detail {

inline void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw runtime_error("sync-store", "write failed on " + path.string() + ": " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

/// Replaces path with content via a temporary file and rename(2), so readers
/// only ever see the old or the new document.
inline void replace_file(const std::filesystem::path& path, std::string_view content) {
  LockAudit::instance().on_write(path);
  auto tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw runtime_error("sync-store", "cannot write " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, content, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0)
    throw runtime_error("sync-store", "cannot rename into " + path.string() + ": " + std::strerror(errno));
}

inline void append_line(const std::filesystem::path& path, std::string_view line) {
  LockAudit::instance().on_write(path);
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw runtime_error("sync-store", "cannot append to " + path.string() + ": " + std::strerror(errno));
  std::string buffer(line);
  buffer.push_back('\n');
  try {
    write_all(fd, buffer, path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace detail
}  // namespace mfsim
