#include "mdsam/trace.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace mdsam {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 4> kColumns = {"step", "layer", "image_mass",
                                                      "token_id"};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    out.push_back(trim(line.substr(begin, comma - begin)));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, const std::string& source, std::size_t line,
               std::string_view field) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError(source, line, std::string(field),
                     "cannot parse '" + std::string(text) + "' as a number");
  }
  return value;
}

json config_to_json(const MdsamConfig& cfg) {
  return json{{"tau", cfg.tau},
              {"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"window", cfg.window},
              {"renorm_mode", std::string(to_string(cfg.renorm_mode))},
              {"reset_policy", std::string(to_string(cfg.reset_policy))}};
}

MdsamConfig config_from_json(const json& j) {
  MdsamConfig cfg;
  cfg.tau = j.at("tau").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.beta = j.at("beta").get<double>();
  cfg.window = j.at("window").get<std::size_t>();
  cfg.renorm_mode = parse_renorm_mode(j.at("renorm_mode").get<std::string>());
  cfg.reset_policy = parse_reset_policy(j.at("reset_policy").get<std::string>());
  return cfg;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return {buf.data(), ptr};
}

void DecodeTrace::validate() const {
  const std::size_t layers = num_layers();
  if (!records.empty() && layers == 0) {
    throw SchemaError("records must start at (step 1, layer 1)");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TraceRecord& r = records[i];
    const std::size_t want_step = i / layers + 1;
    const std::size_t want_layer = i % layers + 1;
    if (r.step != want_step || r.layer != want_layer) {
      throw SchemaError("record " + std::to_string(i + 1) + " is (step " +
                        std::to_string(r.step) + ", layer " + std::to_string(r.layer) +
                        "), expected (" + std::to_string(want_step) + ", " +
                        std::to_string(want_layer) + ")");
    }
    if (!(r.image_mass >= 0.0 && r.image_mass <= 1.0)) {
      throw SchemaError("record " + std::to_string(i + 1) + " has image_mass outside [0, 1]");
    }
    if (want_layer > 1 && r.token_id != records[i - 1].token_id) {
      throw SchemaError("step " + std::to_string(r.step) + " carries more than one token id");
    }
  }
  if (layers != 0 && records.size() % layers != 0) {
    throw SchemaError("last step has fewer than " + std::to_string(layers) + " layer records");
  }
}

std::size_t DecodeTrace::num_layers() const noexcept {
  std::size_t layers = 0;
  for (const auto& r : records) {
    if (r.step != 1) break;
    layers = std::max(layers, r.layer);
  }
  return layers;
}

std::size_t DecodeTrace::num_steps() const noexcept {
  return records.empty() ? 0 : records.back().step;
}

std::vector<double> DecodeTrace::step_series() const {
  std::vector<double> sums(num_steps(), 0.0);
  std::vector<std::size_t> counts(sums.size(), 0);
  for (const auto& r : records) {
    sums[r.step - 1] += r.image_mass;
    ++counts[r.step - 1];
  }
  for (std::size_t s = 0; s < sums.size(); ++s) {
    if (counts[s] != 0) sums[s] /= static_cast<double>(counts[s]);
  }
  return sums;
}

std::vector<std::size_t> DecodeTrace::tokens() const {
  std::vector<std::size_t> out;
  for (const auto& r : records) {
    if (r.layer == 1) out.push_back(r.token_id);
  }
  return out;
}

double DecodeTrace::mean_mass() const {
  const auto series = step_series();
  if (series.empty()) return 0.0;
  double total = 0.0;
  for (double v : series) total += v;
  return total / static_cast<double>(series.size());
}

double image_attention_mass(const AttentionRow& row, const TokenSpan& span) {
  span.check(row.size());
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    total += row.weights[j];
    if (span.contains(j)) inside += row.weights[j];
  }
  if (total <= 0.0) return 0.0;
  return std::clamp(inside / total, 0.0, 1.0);
}

PeakReport detect_peaks(std::span<const double> series, double min_prominence) {
  PeakReport report;
  report.series.assign(series.begin(), series.end());
  const std::size_t n = series.size();
  if (n < 3) return report;

  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double height = series[i];
    if (!(height > series[i - 1] && height > series[i + 1])) continue;

    double left_min = height;
    for (std::size_t j = i; j-- > 0;) {
      if (series[j] > height) break;
      left_min = std::min(left_min, series[j]);
    }
    double right_min = height;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (series[j] > height) break;
      right_min = std::min(right_min, series[j]);
    }
    const double prominence = height - std::max(left_min, right_min);
    if (prominence >= min_prominence) {
      report.indices.push_back(i);
      report.prominences.push_back(prominence);
    }
  }
  return report;
}

TraceComparison compare_traces(const DecodeTrace& baseline, const DecodeTrace& treated) {
  if (baseline.num_steps() != treated.num_steps()) {
    throw ComparisonError("baseline has " + std::to_string(baseline.num_steps()) +
                          " steps, treated has " + std::to_string(treated.num_steps()));
  }
  if (baseline.num_layers() != treated.num_layers()) {
    throw ComparisonError("baseline has " + std::to_string(baseline.num_layers()) +
                          " layers, treated has " + std::to_string(treated.num_layers()));
  }
  const auto base = baseline.step_series();
  const auto treat = treated.step_series();

  TraceComparison out;
  out.deltas.resize(base.size());
  double total = 0.0;
  for (std::size_t s = 0; s < base.size(); ++s) {
    out.deltas[s] = treat[s] - base[s];
    total += out.deltas[s];
    if (out.deltas[s] > 0.0) ++out.increased_steps;
  }
  if (!base.empty()) out.mean_delta = total / static_cast<double>(base.size());
  return out;
}

TraceFormat trace_format_for(const std::filesystem::path& path) {
  return path.extension() == ".json" ? TraceFormat::kJson : TraceFormat::kCsv;
}

void write_trace_csv(const DecodeTrace& trace, std::ostream& out) {
  out << kTraceCsvHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.step << ',' << r.layer << ',' << format_double(r.image_mass) << ',' << r.token_id
        << '\n';
  }
}

void write_trace_json(const DecodeTrace& trace, std::ostream& out) {
  const TraceMetadata& m = trace.metadata;
  json meta{{"seed", m.seed},
            {"prompt_seed", m.prompt_seed},
            {"num_layers", m.num_layers},
            {"num_heads", m.num_heads},
            {"d_model", m.d_model},
            {"vocab_size", m.vocab_size},
            {"image_tokens", m.image_tokens},
            {"text_tokens", m.text_tokens},
            {"mdsam", m.mdsam ? config_to_json(*m.mdsam) : json(nullptr)}};
  json records = json::array();
  for (const auto& r : trace.records) {
    records.push_back(json{{"step", r.step},
                           {"layer", r.layer},
                           {"image_mass", r.image_mass},
                           {"token_id", r.token_id}});
  }
  out << json{{"metadata", std::move(meta)}, {"records", std::move(records)}}.dump(2) << '\n';
}

DecodeTrace read_trace_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::string_view header;
  while (std::getline(in, line)) {
    ++line_no;
    header = trim(line);
    if (!header.empty()) break;
  }
  if (header.empty()) throw SchemaError(source + ": missing CSV header");

  // Column position by name; the header must name each column exactly once.
  std::array<std::size_t, kColumns.size()> position{};
  position.fill(kColumns.size());
  const auto names = split_commas(header);
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto it = std::find(kColumns.begin(), kColumns.end(), names[c]);
    if (it == kColumns.end()) {
      throw SchemaError(source + ":" + std::to_string(line_no) + ": unknown column '" +
                        std::string(names[c]) + "'");
    }
    auto& slot = position[static_cast<std::size_t>(it - kColumns.begin())];
    if (slot != kColumns.size()) {
      throw SchemaError(source + ":" + std::to_string(line_no) + ": duplicate column '" +
                        std::string(names[c]) + "'");
    }
    slot = c;
  }
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    if (position[c] == kColumns.size()) {
      throw SchemaError(source + ": missing column '" + std::string(kColumns[c]) + "'");
    }
  }

  DecodeTrace trace;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_commas(body);
    if (fields.size() != kColumns.size()) {
      throw ParseError(source, line_no, "",
                       "expected " + std::to_string(kColumns.size()) + " fields, found " +
                           std::to_string(fields.size()));
    }
    TraceRecord r;
    r.step = parse_number<std::size_t>(fields[position[0]], source, line_no, kColumns[0]);
    r.layer = parse_number<std::size_t>(fields[position[1]], source, line_no, kColumns[1]);
    r.image_mass = parse_number<double>(fields[position[2]], source, line_no, kColumns[2]);
    r.token_id = parse_number<std::size_t>(fields[position[3]], source, line_no, kColumns[3]);
    trace.records.push_back(r);
  }
  trace.validate();
  return trace;
}

DecodeTrace read_trace_json(std::istream& in, const std::string& source) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, "", e.what());
  }
  if (!doc.is_object() || !doc.contains("records") || !doc.contains("metadata")) {
    throw SchemaError(source + ": expected an object with 'metadata' and 'records'");
  }

  DecodeTrace trace;
  const auto& meta = doc["metadata"];
  try {
    TraceMetadata& m = trace.metadata;
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.prompt_seed = meta.at("prompt_seed").get<std::uint64_t>();
    m.num_layers = meta.at("num_layers").get<std::size_t>();
    m.num_heads = meta.at("num_heads").get<std::size_t>();
    m.d_model = meta.at("d_model").get<std::size_t>();
    m.vocab_size = meta.at("vocab_size").get<std::size_t>();
    m.image_tokens = meta.at("image_tokens").get<std::size_t>();
    m.text_tokens = meta.at("text_tokens").get<std::size_t>();
    if (meta.contains("mdsam") && !meta["mdsam"].is_null()) {
      m.mdsam = config_from_json(meta["mdsam"]);
    }

    std::size_t index = 0;
    for (const auto& rec : doc["records"]) {
      ++index;
      for (auto name : kColumns) {
        if (!rec.contains(std::string(name))) {
          throw SchemaError(source + ": record " + std::to_string(index) + " lacks '" +
                            std::string(name) + "'");
        }
      }
      trace.records.push_back({rec["step"].get<std::size_t>(), rec["layer"].get<std::size_t>(),
                               rec["image_mass"].get<double>(),
                               rec["token_id"].get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError(source + ": " + e.what());
  }
  trace.validate();
  return trace;
}

void export_trace(const DecodeTrace& trace, const std::filesystem::path& path,
                  TraceFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (format == TraceFormat::kJson) {
    write_trace_json(trace, out);
  } else {
    write_trace_csv(trace, out);
  }
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

DecodeTrace import_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  std::istringstream stream(text);
  if (first != std::string::npos && text[first] == '{') {
    return read_trace_json(stream, path.string());
  }
  return read_trace_csv(stream, path.string());
}

}  // namespace mdsam
