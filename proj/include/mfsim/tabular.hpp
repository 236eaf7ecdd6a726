#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mfsim/benchmarks.hpp"
#include "mfsim/io.hpp"

namespace mfsim {

namespace detail {

// Splits one CSV record. Double quotes group a field; "" inside quotes is a
// literal quote.
inline std::vector<std::string> split_csv(std::string_view line, char delimiter = ',') {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back().push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delimiter) {
      fields.emplace_back();
    } else if (ch != '\r') {
      fields.back().push_back(ch);
    }
  }
  return fields;
}

inline std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Precomputed (configuration, seed, fidelity) -> metrics table.
class TabularTable {
 public:
  TabularTable(SpaceDescriptor descriptor, std::string runtime_key)
      : descriptor_(std::move(descriptor)), runtime_key_(std::move(runtime_key)) {}

  const SpaceDescriptor& descriptor() const noexcept { return descriptor_; }
  const std::string& runtime_key() const noexcept { return runtime_key_; }
  std::size_t size() const noexcept { return rows_.size(); }

  /// Adds one row; rejects configurations outside the descriptor, missing or
  /// negative runtimes and duplicates.
  void insert(const ConfigPoint& config, std::uint64_t seed, const FidelityAssignment& fidels, Metrics metrics) {
    descriptor_.space.check(config);
    for (const auto& spec : descriptor_.fidelities) {
      const auto it = fidels.find(spec.name);
      if (it == fidels.end()) throw validation_error("benchmarks", "row is missing fidelity '" + spec.name + "'");
      if (!spec.contains(it->second))
        throw validation_error("benchmarks", "fidelity " + spec.name + "=" + format_number(it->second) + " is out of bounds");
    }
    const auto runtime = metrics.find(runtime_key_);
    if (runtime == metrics.end()) throw validation_error("benchmarks", "row has no runtime column '" + runtime_key_ + "'");
    if (!(runtime->second >= 0.0) || !std::isfinite(runtime->second))
      throw validation_error("benchmarks", "runtime must be finite and non-negative");
    const auto group = group_key(config, fidels);
    if (!rows_.emplace(group + "|" + std::to_string(seed), std::move(metrics)).second)
      throw validation_error("benchmarks", "duplicate row for " + config.key() + " seed " + std::to_string(seed) +
                                               " fidelity " + canonical_key(fidels));
    auto& seeds = seeds_[group];
    seeds.insert(std::upper_bound(seeds.begin(), seeds.end(), seed), seed);
  }

  /// Stored metrics for an exact (config, seed, fidelity) triple.
  const Metrics& lookup(const ConfigPoint& config, std::uint64_t seed, const FidelityAssignment& fidels) const {
    const auto it = rows_.find(group_key(config, fidels) + "|" + std::to_string(seed));
    if (it == rows_.end())
      throw NotFoundError("benchmarks", "no row for " + config.key() + " seed " + std::to_string(seed) + " fidelity " +
                                            canonical_key(fidels));
    return it->second;
  }

  /// Seeds recorded for (config, fidelity), ascending.
  std::span<const std::uint64_t> seeds(const ConfigPoint& config, const FidelityAssignment& fidels) const {
    const auto it = seeds_.find(group_key(config, fidels));
    if (it == seeds_.end())
      throw NotFoundError("benchmarks", "no row for " + config.key() + " fidelity " + canonical_key(fidels));
    return it->second;
  }

  /// Stored metrics; an absent seed is drawn uniformly among the row's seeds.
  Metrics query(const ConfigPoint& config, const QueryArgs& args, Rng& rng) const {
    descriptor_.space.check(config);
    FidelityAssignment fidels;
    for (const auto& spec : descriptor_.fidelities) {
      if (!args.fidels || !args.fidels->contains(spec.name))
        throw validation_error("benchmarks", "query is missing fidelity '" + spec.name + "'");
      fidels.emplace(spec.name, args.fidels->at(spec.name));
    }
    if (args.fidels) {
      for (const auto& [name, value] : *args.fidels)
        if (!fidels.contains(name)) throw validation_error("benchmarks", "unknown fidelity key '" + name + "'");
    }
    if (args.seed) return lookup(config, *args.seed, fidels);
    const auto available = seeds(config, fidels);
    return lookup(config, available[rng.below(available.size())], fidels);
  }

 private:
  static std::string group_key(const ConfigPoint& config, const FidelityAssignment& fidels) {
    return config.key() + "|" + canonical_key(fidels);
  }

  SpaceDescriptor descriptor_;
  std::string runtime_key_;
  std::unordered_map<std::string, Metrics> rows_;
  std::unordered_map<std::string, std::vector<std::uint64_t>> seeds_;
};

/// Reads a descriptor plus a CSV data file whose header names the search
/// dimensions, an optional "seed" column, the fidelity columns and any number
/// of metric columns.
inline TabularTable load_tabular(const SpaceDescriptor& descriptor, const std::filesystem::path& data_file,
                                 const std::string& runtime_key) {
  const auto text = read_text_file(data_file, "benchmarks");
  TabularTable table(descriptor, runtime_key);

  std::size_t begin = 0;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  const auto fail = [&](const std::string& why) {
    throw validation_error("benchmarks", data_file.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (begin < text.size()) {
    auto end = text.find('\n', begin);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv(line);
    if (header.empty()) {
      header = std::move(fields);
      const auto has = [&](const std::string& name) { return std::find(header.begin(), header.end(), name) != header.end(); };
      for (const auto& dim : descriptor.space.dimensions())
        if (!has(dim.name)) fail("missing column for dimension '" + dim.name + "'");
      for (const auto& dim : descriptor.fidelities)
        if (!has(dim.name)) fail("missing column for fidelity '" + dim.name + "'");
      if (!has(runtime_key)) fail("missing runtime column '" + runtime_key + "'");
      continue;
    }
    if (fields.size() != header.size())
      fail("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));

    ConfigPoint::Values values;
    FidelityAssignment fidels;
    Metrics metrics;
    std::uint64_t seed = 0;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const auto& column = header[i];
      const auto& field = fields[i];
      if (const auto* dim = descriptor.space.find(column)) {
        if (dim->is_numeric()) {
          const auto number = detail::parse_double(field);
          if (!number) fail("column '" + column + "' expects a number, got '" + field + "'");
          values.emplace(column, *number);
        } else {
          values.emplace(column, field);
        }
      } else if (column == "seed") {
        const auto number = detail::parse_double(field);
        if (!number || *number < 0 || *number != std::floor(*number)) fail("seed must be a non-negative integer");
        seed = static_cast<std::uint64_t>(*number);
      } else {
        const auto number = detail::parse_double(field);
        if (!number) fail("column '" + column + "' expects a number, got '" + field + "'");
        const bool is_fidelity = std::any_of(descriptor.fidelities.begin(), descriptor.fidelities.end(),
                                             [&](const DimensionSpec& d) { return d.name == column; });
        (is_fidelity ? fidels : metrics).emplace(column, *number);
      }
    }
    try {
      table.insert(ConfigPoint(std::move(values)), seed, fidels, std::move(metrics));
    } catch (const Error& e) {
      fail(e.what());
    }
  }
  if (header.empty()) throw validation_error("benchmarks", data_file.string() + ": empty data file");
  return table;
}

inline TabularTable load_tabular(const std::filesystem::path& descriptor_file, const std::filesystem::path& data_file,
                                 const std::string& runtime_key) {
  return load_tabular(load_descriptor(descriptor_file), data_file, runtime_key);
}

class TabularBenchmark final : public Benchmark {
 public:
  explicit TabularBenchmark(std::shared_ptr<const TabularTable> table) : table_(std::move(table)) {}

  std::string name() const override {
    return table_->descriptor().space.name().empty() ? "tabular" : table_->descriptor().space.name();
  }
  const SearchSpace& space() const override { return table_->descriptor().space; }
  std::span<const DimensionSpec> fidelities() const override { return table_->descriptor().fidelities; }

  Metrics evaluate(const ConfigPoint& config, const QueryArgs& args, Rng& rng) const override {
    return table_->query(config, args, rng);
  }

  const TabularTable& table() const noexcept { return *table_; }

 private:
  std::shared_ptr<const TabularTable> table_;
};

}  // namespace mfsim
