#include "tsmini/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string_view>

#include "tsmini/errors.hpp"

namespace tsmini {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw UsageError("invalid number '" + std::string(v) + "'");
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"dataset", [](RunConfig& c, std::string_view v) { c.dataset = std::string(v); }},
      {"gt", [](RunConfig& c, std::string_view v) { c.gt = std::string(v); }},
      {"out", [](RunConfig& c, std::string_view v) { c.out = std::string(v); }},
      {"measure",
       [](RunConfig& c, std::string_view v) {
         try {
           c.measure = parse_measure_kind(v);
         } catch (const std::invalid_argument& e) {
           throw UsageError(e.what());
         }
       }},
      {"train_frac", [](RunConfig& c, std::string_view v) { c.train_frac = parse_number<double>(v); }},
      {"val_frac", [](RunConfig& c, std::string_view v) { c.val_frac = parse_number<double>(v); }},
      {"test_frac", [](RunConfig& c, std::string_view v) { c.test_frac = parse_number<double>(v); }},
      {"d", [](RunConfig& c, std::string_view v) { c.model.d = parse_number<std::size_t>(v); }},
      {"heads", [](RunConfig& c, std::string_view v) { c.model.heads = parse_number<std::size_t>(v); }},
      {"layers", [](RunConfig& c, std::string_view v) { c.model.layers = parse_number<std::size_t>(v); }},
      {"lr", [](RunConfig& c, std::string_view v) { c.train.lr = parse_number<double>(v); }},
      {"batch", [](RunConfig& c, std::string_view v) { c.train.batch_size = parse_number<std::size_t>(v); }},
      {"epochs", [](RunConfig& c, std::string_view v) { c.train.max_epochs = parse_number<std::size_t>(v); }},
      {"patience", [](RunConfig& c, std::string_view v) { c.train.patience = parse_number<std::size_t>(v); }},
      {"lambda", [](RunConfig& c, std::string_view v) { c.train.loss.lambda = parse_number<double>(v); }},
      {"seed",
       [](RunConfig& c, std::string_view v) {
         c.seed = parse_number<std::uint64_t>(v);
         c.train.seed = c.seed;
       }},
  };
  return table;
}

}  // namespace

std::filesystem::path RunConfig::gt_path() const {
  if (!gt.empty()) return gt;
  return out / ("gt-" + std::string(to_string(measure)) + ".tsim");
}

void RunConfig::validate() const {
  if (dataset.empty()) throw UsageError("config: 'dataset' is required");
  for (double f : {train_frac, val_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw UsageError("config: split fractions must lie in [0, 1]");
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw UsageError("config: train_frac + val_frac + test_frac must equal 1");
  }
  try {
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

RunConfig parse_run_config(std::istream& is, const std::string& source) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) throw UsageError(where() + "expected key=value");
    const std::string_view key = trim(v.substr(0, eq));
    const std::string_view value = trim(v.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError(where() + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw UsageError(where() + "duplicate key '" + std::string(key) + "'");
    try {
      it->second(cfg, value);
    } catch (const UsageError& e) {
      throw UsageError(where() + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path.string() + "'");
  return parse_run_config(is, path.string());
}

}  // namespace tsmini
