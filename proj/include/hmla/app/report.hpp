#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hmla/app/engine_config.hpp"

namespace hmla::app {

inline constexpr int kSchemaVersion = 1;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;

  void add(std::vector<nlohmann::json> row);
};

struct RunManifest {
  std::string command;
  Settings config;
  std::uint64_t seed = 0;
  nlohmann::json parameters = nlohmann::json::object();
  std::string tool_version;
  std::string timestamp;  // UTC, ISO 8601; SOURCE_DATE_EPOCH pins it
  int schema_version = kSchemaVersion;

  nlohmann::json to_json(const std::vector<std::string>& columns = {}) const;
};

std::string tool_version();
std::string utc_timestamp();

std::string csv_escape(const std::string& field);
std::string csv_cell(const nlohmann::json& v);

void write_csv(std::ostream& os, const Table& t);
void write_jsonl(std::ostream& os, const Table& t);

/// Where results go. Without a directory, tables stream to `out` with the
/// manifest embedded as the first line ("# manifest: {...}" for CSV, a
/// {"manifest": {...}} record for JSON lines). With a directory, each table
/// becomes <name>.csv|.jsonl plus a <name>.manifest.json sidecar.
struct OutputSink {
  std::ostream* out = nullptr;
  std::optional<std::filesystem::path> dir;
  OutputFormat format = OutputFormat::Csv;

  void emit(const std::string& name, const Table& t, const RunManifest& m) const;
  // Structured document; only written when a directory is set.
  void emit_document(const std::string& name, nlohmann::json doc, const RunManifest& m) const;
};

}  // namespace hmla::app
