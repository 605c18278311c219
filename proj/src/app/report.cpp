#include "hmla/app/report.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "hmla/errors.hpp"

#ifndef HMLA_VERSION
#define HMLA_VERSION "0.0.0"
#endif

namespace hmla::app {

using nlohmann::json;

void Table::add(std::vector<json> row) {
  if (row.size() != columns.size()) throw ShapeError("table row has wrong column count");
  rows.push_back(std::move(row));
}

json RunManifest::to_json(const std::vector<std::string>& columns) const {
  json j;
  j["schema_version"] = schema_version;
  j["command"] = command;
  j["tool_version"] = tool_version;
  j["timestamp"] = timestamp;
  j["seed"] = seed;
  j["config"] = config;
  j["parameters"] = parameters;
  if (!columns.empty()) j["columns"] = columns;
  return j;
}

std::string tool_version() { return HMLA_VERSION; }

std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (end && *end == '\0' && end != epoch) t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string q = "\"";
  for (char c : field) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return csv_escape(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

void write_csv(std::ostream& os, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << csv_escape(t.columns[i]);
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
    os << '\n';
  }
}

void write_jsonl(std::ostream& os, const Table& t) {
  for (const auto& row : t.rows) {
    json rec = json::object();
    for (std::size_t i = 0; i < row.size(); ++i) rec[t.columns[i]] = row[i];
    os << rec.dump() << '\n';
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

}  // namespace

void OutputSink::emit(const std::string& name, const Table& t, const RunManifest& m) const {
  const json manifest = m.to_json(t.columns);
  if (dir) {
    std::filesystem::create_directories(*dir);
    const bool csv = format == OutputFormat::Csv;
    auto f = open_out(*dir / (name + (csv ? ".csv" : ".jsonl")));
    csv ? write_csv(f, t) : write_jsonl(f, t);
    auto side = open_out(*dir / (name + ".manifest.json"));
    side << manifest.dump(2) << '\n';
    return;
  }
  if (!out) return;
  if (format == OutputFormat::Csv) {
    *out << "# manifest: " << manifest.dump() << '\n';
    write_csv(*out, t);
  } else {
    *out << json{{"manifest", manifest}}.dump() << '\n';
    write_jsonl(*out, t);
  }
}

void OutputSink::emit_document(const std::string& name, json doc, const RunManifest& m) const {
  if (!dir) return;
  std::filesystem::create_directories(*dir);
  doc["manifest"] = m.to_json();
  auto f = open_out(*dir / (name + ".json"));
  f << doc.dump(2) << '\n';
}

}  // namespace hmla::app
