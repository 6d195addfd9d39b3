#include "mdsam/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>
#include <tuple>

#include "mdsam/trace.hpp"

namespace mdsam {

namespace {

struct Entry {
  std::string value;
  std::size_t line = 0;
};

using Section = std::map<std::string, Entry, std::less<>>;

const std::map<std::string, std::set<std::string, std::less<>>, std::less<>>& known_keys() {
  static const std::map<std::string, std::set<std::string, std::less<>>, std::less<>> keys = {
      {"model", {"seed", "layers", "heads", "d_model", "vocab"}},
      {"prompt", {"image_tokens", "text_tokens", "seed"}},
      {"decode", {"steps"}},
      {"mdsam", {"preset", "tau", "alpha", "beta", "window", "renorm", "reset"}},
      {"output", {"trace", "baseline_trace", "summary", "table"}},
      {"sweep", {"tau", "alpha", "beta", "window", "reset", "renorm", "pairs"}},
  };
  return keys;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const auto comma = s.find(',', begin);
    out.push_back(trim(s.substr(begin, comma - begin)));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return out;
}

class Reader {
 public:
  Reader(std::string source, std::map<std::string, Section, std::less<>> sections)
      : source_(std::move(source)), sections_(std::move(sections)) {}

  bool has_section(std::string_view name) const { return sections_.contains(name); }

  const Entry* find(std::string_view section, std::string_view key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  const Entry& require(std::string_view section, std::string_view key) const {
    const Entry* e = find(section, key);
    if (e == nullptr) {
      throw ConfigError(std::string(section) + "." + std::string(key),
                        source_ + ": missing required key");
    }
    return *e;
  }

  template <typename T>
  T number(std::string_view text, std::string_view key, std::size_t line) const {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc() || ptr != end) {
      throw ParseError(source_, line, std::string(key),
                       "'" + std::string(text) + "' is not a valid number");
    }
    return value;
  }

  template <typename T>
  void read(std::string_view section, std::string_view key, T& out) const {
    if (const Entry* e = find(section, key)) out = number<T>(e->value, key, e->line);
  }

  template <typename T>
  std::vector<T> list(const Entry& e, std::string_view key) const {
    std::vector<T> out;
    for (auto item : split_list(e.value)) out.push_back(number<T>(item, key, e.line));
    return out;
  }

  // Re-raises a ConfigError with the file position of the key it names.
  [[noreturn]] void rethrow_located(const ConfigError& err, std::string_view section) const {
    std::size_t line = 0;
    if (const Entry* e = find(section, err.key())) line = e->line;
    std::string where = source_;
    if (line != 0) where += ":" + std::to_string(line);
    const std::string what = err.what();
    throw ConfigError(err.key(), where + ": " + what.substr(err.key().size() + 2));
  }

  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
  std::map<std::string, Section, std::less<>> sections_;
};

Reader tokenize(std::string_view text, const std::string& source) {
  std::map<std::string, Section, std::less<>> sections;
  std::string current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    const auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, line_no, "", "unterminated section header");
      current = std::string(trim(line.substr(1, line.size() - 2)));
      if (!known_keys().contains(current)) {
        throw ParseError(source, line_no, current, "unknown section");
      }
      if (sections.contains(current)) {
        throw ParseError(source, line_no, current, "section appears twice");
      }
      sections[current];
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(source, line_no, "", "expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(source, line_no, "", "empty key");
    if (current.empty()) throw ParseError(source, line_no, key, "key outside of any section");
    if (!known_keys().at(current).contains(key)) {
      throw ConfigError(key, source + ":" + std::to_string(line_no) + ": unknown key in [" +
                                 current + "]");
    }
    if (value.empty()) throw ParseError(source, line_no, key, "missing value");
    auto& section = sections[current];
    if (section.contains(key)) throw ParseError(source, line_no, key, "duplicate key");
    section.emplace(key, Entry{value, line_no});
  }
  return Reader(source, std::move(sections));
}

std::optional<MdsamConfig> read_mdsam(const Reader& r) {
  if (!r.has_section("mdsam")) return std::nullopt;
  MdsamConfig cfg;
  if (const Entry* p = r.find("mdsam", "preset")) {
    try {
      cfg = preset(p->value);
    } catch (const ConfigError& e) {
      r.rethrow_located(e, "mdsam");
    }
  } else {
    r.require("mdsam", "tau");
    r.require("mdsam", "alpha");
    r.require("mdsam", "beta");
  }
  r.read("mdsam", "tau", cfg.tau);
  r.read("mdsam", "alpha", cfg.alpha);
  r.read("mdsam", "beta", cfg.beta);
  r.read("mdsam", "window", cfg.window);
  try {
    if (const Entry* e = r.find("mdsam", "renorm")) cfg.renorm_mode = parse_renorm_mode(e->value);
    if (const Entry* e = r.find("mdsam", "reset")) cfg.reset_policy = parse_reset_policy(e->value);
    cfg.validate();
  } catch (const ConfigError& e) {
    r.rethrow_located(e, "mdsam");
  }
  return cfg;
}

RunSpec read_run(const Reader& r) {
  RunSpec spec;
  const Entry& seed = r.require("model", "seed");
  spec.seed = r.number<std::uint64_t>(seed.value, "seed", seed.line);
  r.read("model", "layers", spec.dims.num_layers);
  r.read("model", "heads", spec.dims.num_heads);
  r.read("model", "d_model", spec.dims.d_model);
  r.read("model", "vocab", spec.dims.vocab_size);
  r.read("prompt", "image_tokens", spec.image_tokens);
  r.read("prompt", "text_tokens", spec.text_tokens);
  r.read("prompt", "seed", spec.prompt_seed);
  const Entry& steps = r.require("decode", "steps");
  spec.steps = r.number<std::size_t>(steps.value, "steps", steps.line);
  spec.mdsam = read_mdsam(r);

  if (const Entry* e = r.find("output", "trace")) spec.outputs.trace = e->value;
  if (const Entry* e = r.find("output", "baseline_trace")) spec.outputs.baseline_trace = e->value;
  if (const Entry* e = r.find("output", "summary")) spec.outputs.summary = e->value;
  if (const Entry* e = r.find("output", "table")) spec.outputs.table = e->value;

  try {
    spec.validate();
  } catch (const ConfigError& e) {
    for (auto section : {"model", "prompt", "decode", "mdsam"}) {
      if (r.find(section, e.key()) != nullptr) r.rethrow_located(e, section);
    }
    throw ConfigError(e.key(), r.source() + ": " + std::string(e.what()).substr(e.key().size() + 2));
  }
  return spec;
}

SweepGrid read_sweep(const Reader& r) {
  SweepGrid grid;
  grid.base = read_run(r);
  if (!grid.base.mdsam) grid.base.mdsam = preset("llava");

  if (const Entry* e = r.find("sweep", "tau")) grid.tau = r.list<double>(*e, "tau");
  if (const Entry* e = r.find("sweep", "alpha")) grid.alpha = r.list<double>(*e, "alpha");
  if (const Entry* e = r.find("sweep", "beta")) grid.beta = r.list<double>(*e, "beta");
  if (const Entry* e = r.find("sweep", "window")) grid.window = r.list<std::size_t>(*e, "window");
  try {
    if (const Entry* e = r.find("sweep", "reset")) {
      for (auto item : split_list(e->value)) grid.reset.push_back(parse_reset_policy(item));
    }
    if (const Entry* e = r.find("sweep", "renorm")) {
      for (auto item : split_list(e->value)) grid.renorm.push_back(parse_renorm_mode(item));
    }
  } catch (const ConfigError& e) {
    r.rethrow_located(e, "sweep");
  }
  if (const Entry* e = r.find("sweep", "pairs")) {
    for (auto item : split_list(e->value)) {
      const auto colon = item.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(r.source(), e->line, "pairs", "expected beta:tau, got '" +
                                                           std::string(item) + "'");
      }
      grid.beta_tau_pairs.emplace_back(
          r.number<double>(trim(item.substr(0, colon)), "pairs", e->line),
          r.number<double>(trim(item.substr(colon + 1)), "pairs", e->line));
    }
    if (!grid.beta.empty() || !grid.tau.empty()) {
      throw ConfigError("pairs", r.source() + ":" + std::to_string(e->line) +
                                     ": cannot be combined with beta or tau lists");
    }
  }

  try {
    grid.validate();
  } catch (const ConfigError& e) {
    r.rethrow_located(e, "sweep");
  }
  return grid;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& values, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i != 0) out += ", ";
    out += fmt(values[i]);
  }
  return out;
}

void write_run_sections(const RunSpec& spec, std::ostringstream& out) {
  out << "[model]\n"
      << "seed = " << spec.seed << '\n'
      << "layers = " << spec.dims.num_layers << '\n'
      << "heads = " << spec.dims.num_heads << '\n'
      << "d_model = " << spec.dims.d_model << '\n'
      << "vocab = " << spec.dims.vocab_size << "\n\n"
      << "[prompt]\n"
      << "image_tokens = " << spec.image_tokens << '\n'
      << "text_tokens = " << spec.text_tokens << '\n'
      << "seed = " << spec.prompt_seed << "\n\n"
      << "[decode]\n"
      << "steps = " << spec.steps << '\n';
  if (spec.mdsam) {
    const MdsamConfig& c = *spec.mdsam;
    out << "\n[mdsam]\n"
        << "tau = " << format_double(c.tau) << '\n'
        << "alpha = " << format_double(c.alpha) << '\n'
        << "beta = " << format_double(c.beta) << '\n'
        << "window = " << c.window << '\n'
        << "renorm = " << to_string(c.renorm_mode) << '\n'
        << "reset = " << to_string(c.reset_policy) << '\n';
  }
  const OutputPaths& o = spec.outputs;
  if (o.trace || o.baseline_trace || o.summary || o.table) {
    out << "\n[output]\n";
    if (o.trace) out << "trace = " << o.trace->string() << '\n';
    if (o.baseline_trace) out << "baseline_trace = " << o.baseline_trace->string() << '\n';
    if (o.summary) out << "summary = " << o.summary->string() << '\n';
    if (o.table) out << "table = " << o.table->string() << '\n';
  }
}

}  // namespace

MdsamConfig preset(std::string_view name) {
  MdsamConfig cfg;
  if (name == "llava") {
    cfg.tau = 0.7;
    cfg.alpha = 0.9;
    cfg.beta = 0.6;
  } else if (name == "deepseekvl") {
    cfg.tau = 0.8;
    cfg.alpha = 0.9;
    cfg.beta = 0.5;
  } else if (name == "minigpt4") {
    cfg.tau = 0.6;
    cfg.alpha = 0.9;
    cfg.beta = 0.5;
  } else {
    throw ConfigError("preset", "unknown preset '" + std::string(name) +
                                    "' (expected llava, deepseekvl or minigpt4)");
  }
  cfg.window = 8;
  cfg.renorm_mode = RenormMode::kRowRenormalize;
  cfg.reset_policy = ResetPolicy::kPersistent;
  return cfg;
}

std::vector<std::string_view> preset_names() { return {"llava", "deepseekvl", "minigpt4"}; }

void RunSpec::validate() const {
  if (dims.num_layers < 1) throw ConfigError("layers", "must be at least 1");
  if (dims.num_heads < 1) throw ConfigError("heads", "must be at least 1");
  if (dims.d_model < 1) throw ConfigError("d_model", "must be at least 1");
  if (dims.d_model % dims.num_heads != 0) {
    throw ConfigError("d_model", "must be divisible by heads");
  }
  if (dims.vocab_size < 1) throw ConfigError("vocab", "must be at least 1");
  if (image_tokens < 1) throw ConfigError("image_tokens", "must be at least 1");
  if (steps < 1) throw ConfigError("steps", "must be at least 1");
  if (mdsam) mdsam->validate();
}

std::vector<MdsamConfig> SweepGrid::cells() const {
  const MdsamConfig base_cfg = base.mdsam.value_or(preset("llava"));
  auto or_base = [](const auto& values, auto fallback) {
    using T = std::decay_t<decltype(fallback)>;
    return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
  };

  std::vector<std::pair<double, double>> pairs = beta_tau_pairs;
  if (pairs.empty()) {
    for (double b : or_base(beta, base_cfg.beta)) {
      for (double t : or_base(tau, base_cfg.tau)) pairs.emplace_back(b, t);
    }
  }

  std::vector<MdsamConfig> out;
  for (const auto& [b, t] : pairs) {
    for (double a : or_base(alpha, base_cfg.alpha)) {
      for (std::size_t w : or_base(window, base_cfg.window)) {
        for (ResetPolicy rp : or_base(reset, base_cfg.reset_policy)) {
          for (RenormMode rm : or_base(renorm, base_cfg.renorm_mode)) {
            out.push_back({t, a, b, w, rm, rp});
          }
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const MdsamConfig& x, const MdsamConfig& y) {
    return std::tie(x.beta, x.tau, x.alpha, x.window, x.reset_policy, x.renorm_mode) <
           std::tie(y.beta, y.tau, y.alpha, y.window, y.reset_policy, y.renorm_mode);
  });
  return out;
}

void SweepGrid::validate() const {
  base.validate();
  for (const MdsamConfig& c : cells()) c.validate();
}

ConfigDocument parse_config_text(std::string_view text, const std::string& source) {
  const Reader reader = tokenize(text, source);
  if (reader.has_section("sweep")) return read_sweep(reader);
  return read_run(reader);
}

ConfigDocument parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

std::string serialize_config(const RunSpec& spec) {
  std::ostringstream out;
  write_run_sections(spec, out);
  return out.str();
}

std::string serialize_config(const SweepGrid& grid) {
  std::ostringstream out;
  write_run_sections(grid.base, out);
  out << "\n[sweep]\n";
  auto num = [](double v) { return format_double(v); };
  if (!grid.beta_tau_pairs.empty()) {
    out << "pairs = "
        << join(grid.beta_tau_pairs,
                [](const auto& p) { return format_double(p.first) + ":" + format_double(p.second); })
        << '\n';
  }
  if (!grid.beta.empty()) out << "beta = " << join(grid.beta, num) << '\n';
  if (!grid.tau.empty()) out << "tau = " << join(grid.tau, num) << '\n';
  if (!grid.alpha.empty()) out << "alpha = " << join(grid.alpha, num) << '\n';
  if (!grid.window.empty()) {
    out << "window = " << join(grid.window, [](std::size_t w) { return std::to_string(w); }) << '\n';
  }
  if (!grid.reset.empty()) {
    out << "reset = "
        << join(grid.reset, [](ResetPolicy p) { return std::string(to_string(p)); }) << '\n';
  }
  if (!grid.renorm.empty()) {
    out << "renorm = "
        << join(grid.renorm, [](RenormMode m) { return std::string(to_string(m)); }) << '\n';
  }
  return out.str();
}

}  // namespace mdsam
