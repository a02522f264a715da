#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "epir/epir.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  Scratch() {
    path = fs::temp_directory_path() /
           ("epir_capi_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

int cli(const std::string& args) {
  const std::string cmd = std::string(EPIR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string get(const epir_config* c, const char* key) {
  char buf[128];
  REQUIRE(epir_config_get(c, key, buf, sizeof(buf)) == EPIR_OK);
  return buf;
}

}  // namespace

TEST_CASE("config handle") {
  epir_config* c = nullptr;
  REQUIRE(epir_config_new(&c) == EPIR_OK);
  CHECK(get(c, "epochs") == "300");
  char before[17], after[17];
  REQUIRE(epir_config_hash(c, before, sizeof(before)) == EPIR_OK);
  CHECK(std::string(before).size() == 16);

  CHECK(epir_config_set(c, "epochs", "40") == EPIR_OK);
  CHECK(get(c, "epochs") == "40");
  REQUIRE(epir_config_hash(c, after, sizeof(after)) == EPIR_OK);
  CHECK(std::string(before) != after);

  CHECK(epir_config_set(c, "colour", "red") == EPIR_ERR_CONFIG);
  CHECK(std::string(epir_last_error()).find("colour") != std::string::npos);
  CHECK(epir_config_set(c, "patch_size", "5") == EPIR_ERR_CONFIG);
  CHECK(get(c, "patch_size") == "7");
  CHECK(epir_config_set(c, nullptr, "1") == EPIR_ERR_ARGUMENT);
  CHECK(epir_config_hash(c, before, 4) == EPIR_ERR_ARGUMENT);

  char tiny[3];
  CHECK(epir_config_get(c, "epochs", tiny, sizeof(tiny)) == EPIR_OK);
  CHECK(std::string(tiny) == "40");
  epir_config_free(c);

  CHECK(epir_config_load("/nonexistent/run.cfg", &c) == EPIR_ERR_CONFIG);
  CHECK(std::string(epir_version()).size() > 0);
}

TEST_CASE("synthetic data, manifest and cost through the C API") {
  Scratch dir;
  epir_synth_options o;
  epir_synth_defaults(&o);
  o.subjects = 2;
  o.samples_per_subject = 3;
  o.image_size = 32;
  REQUIRE(epir_synth(&o, dir.path.c_str()) == EPIR_OK);

  epir_manifest* m = nullptr;
  REQUIRE(epir_manifest_load((dir.path / "manifest.csv").c_str(), nullptr, &m) == EPIR_OK);
  CHECK(epir_manifest_size(m) == 6);
  CHECK(epir_manifest_num_subjects(m) == 2);
  CHECK(epir_manifest_num_classes(m) == 3);

  epir_config* c = nullptr;
  REQUIRE(epir_config_new(&c) == EPIR_OK);
  epir_cache_summary s{};
  CHECK(epir_cache(m, c, (dir.path / "cache").c_str(), &s) == EPIR_OK);
  CHECK(s.written == 6);
  CHECK(epir_cache(m, c, (dir.path / "cache").c_str(), &s) == EPIR_OK);
  CHECK(s.skipped == 6);
  CHECK(s.written == 0);
  epir_manifest_free(m);

  epir_cost cost{};
  REQUIRE(epir_cost_report(c, 3, nullptr, &cost) == EPIR_OK);
  CHECK(cost.flops == cost.instrumented_flops);
  CHECK(cost.attention_flops < cost.flops);
  CHECK(cost.params > 0);
  CHECK(epir_manifest_load("/nonexistent.csv", c, &m) != EPIR_OK);
  epir_config_free(c);
}

TEST_CASE("cli exit codes") {
  Scratch dir;
  const auto d = dir.path.string();
  CHECK(cli("cost") == 0);
  CHECK(cli("cost --set patch_size=5") == 1);
  CHECK(cli("cost --set nonsense") == 1);
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("") == 1);
  CHECK(cli("cost --config " + d + "/missing.cfg") == 1);
  {
    std::ofstream(dir.path / "bad.cfg") << "epochs = 2\nmystery = 1\n";
  }
  CHECK(cli("cost --config " + d + "/bad.cfg") == 1);
  CHECK(cli("eval --run " + d + "/no_such_run") == 1);
  CHECK(cli("synth --out " + d + "/data --subjects 2 --samples 2 --size 32") == 0);
  CHECK(fs::exists(dir.path / "data" / "manifest.csv"));
  CHECK(cli("cache --manifest " + d + "/data/manifest.csv --cache " + d + "/cache") == 0);
  CHECK(cli("sweep --manifest " + d + "/data/manifest.csv --axis depth --values 3 --out " + d + "/s.csv") == 1);
  CHECK(cli("sweep --manifest " + d + "/data/manifest.csv --axis num_blocks --values x --out " + d + "/s.csv") == 1);
  CHECK(cli("cost --json " + d + "/cost.json") == 0);
  CHECK(fs::exists(dir.path / "cost.json"));

  for (const auto& e : fs::directory_iterator(dir.path / "data" / "frames")) {
    if (e.path().string().ends_with("_apex.pgm")) {
      std::ofstream(e.path(), std::ios::trunc) << "not an image";
      break;
    }
  }
  CHECK(cli("cache --manifest " + d + "/data/manifest.csv --cache " + d + "/fresh") == 2);
}
