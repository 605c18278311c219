#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hmla/app/cli.hpp"
#include "hmla/app/commands.hpp"
#include "hmla/app/engine_config.hpp"
#include "hmla/app/report.hpp"

using namespace hmla;
using namespace hmla::app;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args, std::vector<std::string> env = {}) {
  args.insert(args.begin(), "hmla");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::vector<char*> envp;
  for (auto& e : env) envp.push_back(e.data());
  envp.push_back(nullptr);
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), envp.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("hmla_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& body) const {
    const auto p = path / name;
    std::ofstream(p) << body;
    return p.string();
  }
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

nlohmann::json manifest_of(const std::string& out) {
  const auto first = lines(out).at(0);
  REQUIRE(first.rfind("# manifest: ", 0) == 0);
  return nlohmann::json::parse(first.substr(12));
}

}  // namespace

TEST_CASE("config layering: file < env < flags") {
  TempDir dir;
  const auto ini = dir.file("a.ini", "[model]\npreset = kimi-k2\n[policy]\nthreshold = 16\n[cache]\nblock_size = 64\n");
  const auto file = read_config_file(ini);
  CHECK(file.at("model.preset") == "kimi-k2");

  std::string e1 = "HMLA_POLICY_THRESHOLD=32", e2 = "HMLA_CACHE_BLOCK_SIZE=256", e3 = "PATH=/bin";
  char* envp[] = {e1.data(), e2.data(), e3.data(), nullptr};
  const auto env = env_settings(envp);
  CHECK(env.size() == 2);
  CHECK(env.at("cache.block_size") == "256");

  auto cfg = resolve_config(file, {}, {});
  CHECK(cfg.model.num_heads == 64);
  CHECK(cfg.policy().threshold_batch == 16);
  CHECK(cfg.block_size == 64);

  cfg = resolve_config(file, env, {});
  CHECK(cfg.policy().threshold_batch == 32);
  CHECK(cfg.block_size == 256);

  cfg = resolve_config(file, env, {{"policy.threshold", "8"}});
  CHECK(cfg.policy().threshold_batch == 8);
  CHECK(cfg.block_size == 256);

  cfg = resolve_config({}, {}, {});
  CHECK(cfg.policy().threshold_batch == 64);
  CHECK(cfg.snapshot().at("policy.threshold") == "auto:64");
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(resolve_config({{"cache.colour", "red"}}, {}, {}), ArgumentError);
  CHECK_THROWS_AS(resolve_config({{"gpu.count", "1"}}, {}, {}), ArgumentError);
  CHECK_THROWS_AS(resolve_config({{"workload.batch", "1"}}, {}, {}), ArgumentError);
  CHECK(resolve_config({{"workload.batch_size", "4"}}, {}, {}).extra.at("workload.batch_size") == "4");
  CHECK_THROWS_AS(resolve_config({{"cache.blocks", "-3"}}, {}, {}), ArgumentError);
  CHECK_THROWS_AS(resolve_config({{"cache.block_size", "0"}}, {}, {}), ArgumentError);
  CHECK_THROWS_AS(resolve_config({{"hardware.peak_flops", "fast"}}, {}, {}), ArgumentError);
  CHECK_THROWS_AS(resolve_config({{"model.preset", "gpt-x"}}, {}, {}), NotFoundError);
  CHECK_THROWS_AS(parse_assignment("nodot=1"), ArgumentError);
  CHECK(parse_assignment("cache.blocks=12").second == "12");
  const auto custom = resolve_config({{"hardware.peak_flops", "1e15"}}, {}, {});
  CHECK(custom.hardware.name == "custom");
  CHECK(custom.hardware.peak_flops == 1e15);
}

TEST_CASE("count lists") {
  CHECK(parse_count_list("1,2,5") == std::vector<std::size_t>{1, 2, 5});
  CHECK(parse_count_list("4:32") == std::vector<std::size_t>{4, 8, 16, 32});
  CHECK(parse_count_list("3:20") == std::vector<std::size_t>{3, 6, 12});
  CHECK_THROWS_AS(parse_count_list("8:2"), ArgumentError);
  CHECK_THROWS_AS(parse_count_list(""), ArgumentError);
}

TEST_CASE("csv escaping") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("two\nlines") == "\"two\nlines\"");
  Table t{{"a", "b"}, {}};
  t.add({nullptr, true});
  t.add({1.5, "x,y"});
  CHECK_THROWS_AS(t.add({1}), ShapeError);
  std::ostringstream out;
  write_csv(out, t);
  CHECK(out.str() == "a,b\n,true\n1.5,\"x,y\"\n");
}

TEST_CASE("threshold command and manifest line") {
  const auto r = cli({"--seed", "7", "threshold"});
  REQUIRE(r.code == kExitOk);
  const auto m = manifest_of(r.out);
  CHECK(m.at("command") == "threshold");
  CHECK(m.at("seed") == 7);
  CHECK(m.at("schema_version") == kSchemaVersion);
  CHECK(m.at("config").at("model.name") == "deepseek-v3");
  const auto ls = lines(r.out);
  CHECK(ls.at(1) == "model,hardware,peak_flops,hbm_bandwidth,dtype_bytes,analytic,batch,rounded,capped");
  CHECK(ls.at(2).find(",62,64,false") != std::string::npos);
  CHECK(ls.size() == 3);

  const auto all = cli({"threshold", "--all-hardware"});
  CHECK(lines(all.out).size() == 2 + cost::hardware_preset_names().size());
}

TEST_CASE("jsonl output") {
  const auto r = cli({"--format", "jsonl", "threshold"});
  REQUIRE(r.code == kExitOk);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 2);
  CHECK(nlohmann::json::parse(ls[0]).contains("manifest"));
  const auto row = nlohmann::json::parse(ls[1]);
  CHECK(row.at("rounded") == 64);
  CHECK(row.at("capped") == false);
}

TEST_CASE("output directory gets tables and manifest sidecars") {
  TempDir dir;
  const auto out = (dir.path / "run").string();
  const auto r = cli({"--output", out, "--seed", "3", "simulate", "--batch", "4", "--prefix-len", "32", "--gen",
                      "fixed:2", "--method", "all", "--math", "full", "--parity"});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"simulate.csv", "simulate.manifest.json", "simulate.trace.csv",
                        "simulate.trace.manifest.json", "simulate.report.json"})
    CHECK(fs::exists(fs::path(out) / f));
  std::ifstream mf(fs::path(out) / "simulate.manifest.json");
  const auto m = nlohmann::json::parse(mf);
  CHECK(m.at("seed") == 3);
  CHECK(m.at("columns").at(0) == "method");
  std::ifstream csv(fs::path(out) / "simulate.csv");
  std::string header, row;
  std::getline(csv, header);
  CHECK(header.rfind("method,B,L_s,requests,tokens,steps", 0) == 0);
  int rows = 0;
  while (std::getline(csv, row)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("roofline and footprint schemas") {
  auto r = cli({"roofline", "--batches", "1,64,1024", "--methods", "absorb,typhoon"});
  REQUIRE(r.code == kExitOk);
  auto ls = lines(r.out);
  CHECK(ls.at(1) == "method,B,S_q,L_s,L_n,macs,hbm_bytes,time_s,tokens_per_s,hardware");
  CHECK(ls.size() == 2 + 6 + 1);
  CHECK(ls.back().rfind("crossover,64,", 0) == 0);

  r = cli({"footprint", "--batches", "4096", "--max-seq", "32768"});
  REQUIRE(r.code == kExitOk);
  ls = lines(r.out);
  CHECK(ls.at(1) ==
        "B,max_seq,L_s,typhoon,weights_bytes,compressed_cache_bytes,expanded_shared_bytes,total_bytes,overhead_pct");
  CHECK(ls.size() == 3);
}

TEST_CASE("exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"threshold", "--max-batch", "zero"}).code == kExitUsage);
  CHECK(cli({"--set", "cache.colour=red", "threshold"}).code == kExitUsage);
  CHECK(cli({"--model", "nope", "threshold"}).code == kExitUsage);
  CHECK(cli({"--config", "/does/not/exist.ini", "threshold"}).code == kExitUsage);
  CHECK(cli({"equivalence", "--trials", "0"}).code == kExitUsage);
  CHECK(cli({"equivalence", "--trials", "5"}).code == kExitOk);
  CHECK(cli({"equivalence", "--trials", "5", "--inject-fault"}).code == kExitViolation);
  CHECK(cli({"--set", "cache.blocks=1", "simulate", "--batch", "2", "--tail", "fixed:300"}).code == kExitCapacity);
  const auto bad = cli({"--set", "cache.colour=red", "threshold"});
  CHECK(bad.err.find("cache.colour") != std::string::npos);
}

TEST_CASE("environment and flags reach commands") {
  auto r = cli({"threshold"}, {"HMLA_MODEL_PRESET=kimi-k2"});
  REQUIRE(r.code == kExitOk);
  CHECK(lines(r.out).at(2).rfind("kimi-k2,", 0) == 0);
  r = cli({"--model", "deepseek-v3", "threshold"}, {"HMLA_MODEL_PRESET=kimi-k2"});
  CHECK(lines(r.out).at(2).rfind("deepseek-v3,", 0) == 0);

  TempDir dir;
  const auto ini = dir.file("c.ini", "[hardware]\npreset = gpu-h-class\n");
  r = cli({"--config", ini, "threshold"});
  CHECK(lines(r.out).at(2).find(",90,128,") != std::string::npos);
  r = cli({"--config", ini, "threshold"}, {"HMLA_HARDWARE_PRESET=ascend-910-class"});
  CHECK(lines(r.out).at(2).find(",62,64,") != std::string::npos);
}
