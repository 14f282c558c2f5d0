#include "pmc/harness/report.hpp"

#include <charconv>
#include <ctime>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pmc/error.hpp"

namespace pmc::harness {

using ojson = nlohmann::ordered_json;

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

double client_compute_us(const pipeline::Timings& t) {
  double s = 0;
  for (const auto& [k, v] : t) {
    if (k.rfind("client-", 0) == 0) s += v;
  }
  return s;
}

ReportRow summarize_records(std::span<const ImageRecord> records) {
  ReportRow r;
  r.images = records.size();
  std::vector<double> s1, s2;
  std::map<std::string, double> stage_total;
  double e2e = 0, compute = 0;
  std::size_t correct = 0, ok = 0;
  for (const auto& rec : records) {
    if (!rec.ok) {
      ++r.errors;
      continue;
    }
    ++ok;
    correct += rec.label == rec.truth;
    s1.push_back(static_cast<double>(rec.s1_bytes));
    s2.push_back(static_cast<double>(rec.s2_bytes));
    for (const auto& [k, v] : rec.timings) stage_total[k] += v;
    e2e += rec.end_to_end_us;
    compute += client_compute_us(rec.timings);
  }
  r.accuracy = r.images ? static_cast<double>(correct) / static_cast<double>(r.images) : 0.0;
  r.s1 = mean_std(s1);
  r.s2 = mean_std(s2);
  if (ok > 0) {
    const double n = static_cast<double>(ok);
    double stage_sum = 0;
    for (const auto& [k, v] : stage_total) {
      r.stage_mean_us[k] = v / n;
      stage_sum += v / n;
    }
    r.end_to_end_us = e2e / n;
    r.client_compute_us = compute / n;
    r.timing_residual = r.end_to_end_us > 0 ? (r.end_to_end_us - stage_sum) / r.end_to_end_us : 0.0;
  }
  return r;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "' in report CSV");
  return v;
}

template <class T>
T parse_int(const std::string& s) {
  T v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "' in report CSV");
  return v;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// RFC 4180 records; quoted fields may hold commas, quotes and newlines.
std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    any = true;
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in report CSV");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string stage_column(const char* stage) { return std::string(stage) + "_us"; }

ojson mean_std_json(const MeanStd& m) { return ojson{{"mean", m.mean}, {"std", m.std}}; }

}  // namespace

std::vector<std::string> csv_columns() {
  std::vector<std::string> cols{"config", "model", "codec", "deployment", "client_quality", "client_subsampling",
                                "edge_quality", "edge_subsampling", "images", "errors", "accuracy", "s1_mean",
                                "s1_std", "s2_mean", "s2_std"};
  for (const char* s : kReportStages) cols.push_back(stage_column(s));
  for (const char* c : {"client_compute_us", "end_to_end_us", "timing_residual", "ssim_original_decoded",
                        "attested_hash", "bitstring_hash", "seed", "timestamp"}) {
    cols.push_back(c);
  }
  return cols;
}

std::string to_csv(const std::vector<ReportRow>& rows) {
  std::string out;
  const auto cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  for (const auto& r : rows) {
    std::vector<std::string> f{quote(r.config), quote(r.model), quote(r.codec), quote(r.deployment),
                               std::to_string(r.client_quality), quote(r.client_subsampling),
                               std::to_string(r.edge_quality), quote(r.edge_subsampling), std::to_string(r.images),
                               std::to_string(r.errors), fmt(r.accuracy), fmt(r.s1.mean), fmt(r.s1.std),
                               fmt(r.s2.mean), fmt(r.s2.std)};
    for (const char* s : kReportStages) {
      auto it = r.stage_mean_us.find(s);
      f.push_back(it == r.stage_mean_us.end() ? "" : fmt(it->second));
    }
    f.push_back(fmt(r.client_compute_us));
    f.push_back(fmt(r.end_to_end_us));
    f.push_back(fmt(r.timing_residual));
    f.push_back(fmt(r.ssim_original_decoded));
    f.push_back(quote(r.attested_hash));
    f.push_back(quote(r.bitstring_hash));
    f.push_back(std::to_string(r.seed));
    f.push_back(quote(r.timestamp));
    for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
    out += "\n";
  }
  return out;
}

std::vector<ReportRow> parse_csv(const std::string& text) {
  auto records = split_csv(text);
  const auto cols = csv_columns();
  if (records.empty() || records[0] != cols) throw FormatError("report CSV header does not match the expected columns");
  std::vector<ReportRow> rows;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& f = records[k];
    if (f.size() != cols.size()) {
      throw FormatError("report CSV row " + std::to_string(k) + " has " + std::to_string(f.size()) + " fields");
    }
    ReportRow r;
    std::size_t i = 0;
    r.config = f[i++];
    r.model = f[i++];
    r.codec = f[i++];
    r.deployment = f[i++];
    r.client_quality = parse_int<int>(f[i++]);
    r.client_subsampling = f[i++];
    r.edge_quality = parse_int<int>(f[i++]);
    r.edge_subsampling = f[i++];
    r.images = parse_int<std::size_t>(f[i++]);
    r.errors = parse_int<std::size_t>(f[i++]);
    r.accuracy = parse_double(f[i++]);
    r.s1.mean = parse_double(f[i++]);
    r.s1.std = parse_double(f[i++]);
    r.s2.mean = parse_double(f[i++]);
    r.s2.std = parse_double(f[i++]);
    for (const char* s : kReportStages) {
      const auto& v = f[i++];
      if (!v.empty()) r.stage_mean_us[s] = parse_double(v);
    }
    r.client_compute_us = parse_double(f[i++]);
    r.end_to_end_us = parse_double(f[i++]);
    r.timing_residual = parse_double(f[i++]);
    r.ssim_original_decoded = parse_double(f[i++]);
    r.attested_hash = f[i++];
    r.bitstring_hash = f[i++];
    r.seed = parse_int<std::uint64_t>(f[i++]);
    r.timestamp = f[i++];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string to_json(const ExperimentReport& report, bool per_image) {
  ojson j;
  j["mode"] = report.mode;
  j["dataset"] = report.dataset;
  j["eval_images"] = report.eval_images;
  j["seed"] = report.seed;
  j["started"] = report.started;
  j["finished"] = report.finished;
  j["raw_image_bytes"] = kRawImageBytes;
  j["config"] = report.config;
  ojson rows = ojson::array();
  for (const auto& r : report.rows) {
    ojson row{{"config", r.config},
              {"model", r.model},
              {"codec", r.codec},
              {"deployment", r.deployment},
              {"client_jpeg", {{"quality", r.client_quality}, {"subsampling", r.client_subsampling}}},
              {"edge_jpeg", {{"quality", r.edge_quality}, {"subsampling", r.edge_subsampling}}},
              {"images", r.images},
              {"errors", r.errors},
              {"accuracy", r.accuracy},
              {"s1_bytes", mean_std_json(r.s1)},
              {"s2_bytes", mean_std_json(r.s2)},
              {"stage_mean_us", r.stage_mean_us},
              {"client_compute_us", r.client_compute_us},
              {"end_to_end_us", r.end_to_end_us},
              {"timing_residual", r.timing_residual},
              {"ssim_original_decoded", r.ssim_original_decoded},
              {"attested_hash", r.attested_hash},
              {"bitstring_hash", r.bitstring_hash},
              {"seed", r.seed},
              {"timestamp", r.timestamp}};
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  ojson sub = ojson::array();
  for (const auto& s : report.subsampling) {
    sub.push_back({{"model", s.model},
                   {"quality", s.quality},
                   {"size_444", mean_std_json(s.size_444)},
                   {"size_420", mean_std_json(s.size_420)},
                   {"psnr_444", s.psnr_444},
                   {"psnr_420", s.psnr_420},
                   {"accuracy_444", s.accuracy_444},
                   {"accuracy_420", s.accuracy_420},
                   // Full-scale figures at quality 89, for comparison only.
                   {"reference",
                    {{"size_444", 2057.36}, {"size_420", 1212.33}, {"accuracy_444", 0.9117}, {"accuracy_420", 0.1150}}}});
  }
  j["subsampling_study"] = std::move(sub);
  ojson comp = ojson::array();
  for (const auto& c : report.compression) {
    comp.push_back({{"model", c.model},
                    {"png_regular", c.png_regular},
                    {"png_perturbed", c.png_perturbed},
                    {"jpeg_quality_regular", c.jpeg_quality_regular},
                    {"jpeg_quality_perturbed", c.jpeg_quality_perturbed},
                    {"jpeg_regular", c.jpeg_regular},
                    {"jpeg_perturbed", c.jpeg_perturbed},
                    {"accuracy_regular", c.accuracy_regular},
                    {"accuracy_perturbed", c.accuracy_perturbed},
                    {"reference", {{"png_regular", 2662.60}, {"png_perturbed", 2690.56}}}});
  }
  j["compression_study"] = std::move(comp);
  if (per_image) {
    ojson recs = ojson::array();
    for (const auto& r : report.records) {
      recs.push_back({{"config", r.config},
                      {"request_id", r.request_id},
                      {"index", r.index},
                      {"truth", r.truth},
                      {"label", r.label},
                      {"ok", r.ok},
                      {"error", r.error},
                      {"s1_bytes", r.s1_bytes},
                      {"s2_bytes", r.s2_bytes},
                      {"end_to_end_us", r.end_to_end_us},
                      {"timings", r.timings}});
    }
    j["records"] = std::move(recs);
  }
  return j.dump(2);
}

void emit_report(const ExperimentReport& report, const std::string& prefix, bool per_image) {
  auto write = [](const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write report '" + path + "'");
    f << body;
    if (!f) throw Error("failed writing report '" + path + "'");
  };
  write(prefix + ".csv", to_csv(report.rows));
  write(prefix + ".json", to_json(report, per_image));
}

}  // namespace pmc::harness
