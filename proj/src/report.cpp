#include "corrnet/report.hpp"

#include <cmath>
#include <ctime>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace corrnet {

using nlohmann::json;

std::string csv_quote(const std::string& field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs) return field;
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), n_cols_(header.size()), path_(path) {
  if (!out_) throw std::runtime_error("cannot write csv " + path);
  if (header.empty()) throw std::invalid_argument("csv header must be nonempty");
  row(header);
  rows_ = 0;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != n_cols_) {
    throw std::invalid_argument("csv " + path_ + ": row has " + std::to_string(cells.size()) +
                                " cells, header has " + std::to_string(n_cols_));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << csv_quote(cells[i]);
  }
  out_ << "\r\n";
  ++rows_;
}

std::string csv_double(double v) {
  if (std::isnan(v)) return "";
  return format_double(v);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read csv " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  auto end_field = [&] {
    record.push_back(field);
    field.clear();
    any = true;
  };
  auto end_record = [&] {
    if (!any && record.empty()) return;
    end_field();
    if (table.header.empty()) table.header = record;
    else table.rows.push_back(record);
    record.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      end_field();
      field.clear();
      any = true;
    } else if (c == '\r') {
      // swallowed; \n ends the record
    } else if (c == '\n') {
      end_record();
    } else {
      field += c;
    }
  }
  if (!field.empty() || any || !record.empty()) end_record();
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) {
      throw std::runtime_error("csv " + path + ": ragged row");
    }
  }
  return table;
}

void write_steps_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  CsvWriter w(path, {"step", "task_loss", "corrector_loss", "staleness_l1", "kl_ph", "kl_pgp"});
  for (const StepRecord& s : steps) {
    w.row({std::to_string(s.step), csv_double(s.task_loss), csv_double(s.corrector_loss),
           csv_double(s.staleness_l1), csv_double(s.kl_ph), csv_double(s.kl_pgp)});
  }
}

void write_evals_jsonl(const std::string& path, const std::vector<EvalRecord>& evals) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const EvalRecord& e : evals) {
    json j;
    j["step"] = e.step;
    json rec = json::object();
    for (const auto& [k, v] : e.recall) rec[std::to_string(k)] = v;
    j["recall"] = rec;
    if (e.answer_accuracy >= 0.0) j["answer_accuracy"] = e.answer_accuracy;
    j["reembed_counter"] = e.reembed_counter;
    out << j.dump() << "\n";
  }
}

void write_summary_csv(const std::string& path, const std::vector<std::string>& header,
                       const std::vector<std::string>& row) {
  CsvWriter w(path, header);
  w.row(row);
}

void write_manifest(const RunManifest& m, const std::string& path) {
  json j;
  j["command"] = m.command;
  j["artifact_version"] = m.artifact_version;
  j["config_digest"] = m.config_digest;
  j["cell_digest"] = m.cell_digest;
  j["seed"] = m.seed;
  j["config"] = json::object();
  for (const auto& [k, v] : m.config) j["config"][k] = v;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  j["status"] = m.status;
  j["metrics"] = json::object();
  for (const auto& [k, v] : m.metrics) {
    if (std::isnan(v)) j["metrics"][k] = nullptr;
    else j["metrics"][k] = v;
  }
  if (!m.error.empty()) j["error"] = m.error;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path);
  json j;
  in >> j;
  RunManifest m;
  m.command = j.value("command", "");
  m.artifact_version = j.value("artifact_version", "");
  m.config_digest = j.value("config_digest", "");
  m.cell_digest = j.value("cell_digest", "");
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("config")) {
    for (const auto& [k, v] : j["config"].items()) m.config[k] = v.get<std::string>();
  }
  m.started_utc = j.value("started_utc", "");
  m.finished_utc = j.value("finished_utc", "");
  m.status = j.value("status", "");
  if (j.contains("metrics")) {
    for (const auto& [k, v] : j["metrics"].items()) {
      m.metrics[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  }
  m.error = j.value("error", "");
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace corrnet
