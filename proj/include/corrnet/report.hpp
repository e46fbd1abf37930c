#pragma once

// Result persistence: RFC-4180 CSV with a header row, JSON-lines step logs,
// and the per-run manifest. Doubles render in shortest round-trip form so
// identical runs produce byte-identical files.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "corrnet/config.hpp"
#include "corrnet/trainer.hpp"

namespace corrnet {

std::string csv_quote(const std::string& field);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  std::size_t rows_written() const { return rows_; }

 private:
  std::ofstream out_;
  std::size_t n_cols_ = 0;
  std::size_t rows_ = 0;
  std::string path_;
};

// "" for NaN so spreadsheet tools read gaps, not parse errors.
std::string csv_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path);

void write_steps_csv(const std::string& path, const std::vector<StepRecord>& steps);
void write_evals_jsonl(const std::string& path, const std::vector<EvalRecord>& evals);
void write_summary_csv(const std::string& path, const std::vector<std::string>& header,
                       const std::vector<std::string>& row);

struct RunManifest {
  std::string command;
  std::string artifact_version;
  std::string config_digest;
  std::string cell_digest;
  std::uint64_t seed = 0;
  FlatConfig config;
  std::string started_utc;
  std::string finished_utc;
  std::string status;  // running | ok | failed
  std::map<std::string, double> metrics;
  std::string error;
};

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

std::string utc_timestamp();

}  // namespace corrnet
