#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"
#include "ecgan/checkpoint.hpp"
#include "ecgan/error.hpp"
#include "ecgan/harness.hpp"
#include "fixtures.hpp"

using namespace ecgan;
using namespace ecgan::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small enough that a cell trains in well under a second.
std::string tiny_config(const fs::path& out, const std::string& extra = "") {
  return R"({"epochs": 2, "batch_size": 16, "model": {"gan_width": 8, "classifier_width": 8},
  "dataset": {"image_size": 16, "n_per_class": 6, "test_n_per_class": 6},
  "write_checkpoints": false, "output_dir": ")" +
         out.string() + "\"" + extra + "}";
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

struct Run {
  int code;
  std::string out, err;
};

Run train_cmd(const fs::path& cfg, std::optional<std::uint64_t> seed = std::nullopt) {
  std::ostringstream out, err;
  const int code = cmd_train(cfg.string(), seed, out, err);
  return {code, out.str(), err.str()};
}

int cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" ECGAN_CLI "\" " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("train writes metrics, run.json and checkpoints") {
  const fs::path dir = scratch_dir("h-train");
  const fs::path cfg =
      write_config(dir, "c.json", tiny_config(dir / "out", R"(, "seeds": [0, 1], "write_checkpoints": true)"));
  const Run r = train_cmd(cfg);
  REQUIRE(r.code == kExitOk);
  CHECK(r.err.empty());
  const auto rows = lines(slurp(dir / "out" / "metrics.csv"));
  REQUIRE(rows.size() == 1 + 2 * 2);
  CHECK(rows[0] == metrics_header());
  CHECK(rows[0] ==
        "run_id,variant,percent,lambda,seed,epoch,loss_d,loss_g,loss_c_sup,loss_c_unsup,keep_rate,train_acc,test_acc");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::count(rows[i].begin(), rows[i].end(), ',') == 12);
    CHECK(rows[i].find('"') == std::string::npos);
  }
  CHECK(rows[1].rfind("ecgan_p100_l0.1_s0,ecgan,", 0) == 0);
  CHECK(rows[3].rfind("ecgan_p100_l0.1_s1,", 0) == 0);

  const fs::path ck = dir / "out" / "checkpoints" / "ecgan_p100_l0.1_s0";
  for (const char* f : {"classifier.ckpt", "generator.ckpt", "discriminator.ckpt"}) CHECK(fs::exists(ck / f));

  // run.json reproduces the run.
  const ExperimentConfig echoed = load_config((dir / "out" / "run.json").string());
  CHECK(echoed.seeds == std::vector<std::uint64_t>{0, 1});
  std::string again = slurp(dir / "out" / "run.json");
  again.replace(again.find(dir.string() + "/out"), (dir / "out").string().size(), (dir / "again").string());
  REQUIRE(train_cmd(write_config(dir, "again.json", again)).code == kExitOk);
  CHECK(slurp(dir / "again" / "metrics.csv") == slurp(dir / "out" / "metrics.csv"));
}

TEST_CASE("identical configs give byte-identical metrics") {
  const fs::path dir = scratch_dir("h-determinism");
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("o" + std::to_string(i));
    REQUIRE(train_cmd(write_config(dir, "c" + std::to_string(i) + ".json", tiny_config(out))).code == kExitOk);
    csv[i] = slurp(out / "metrics.csv");
  }
  CHECK(!csv[0].empty());
  CHECK(csv[0] == csv[1]);
}

TEST_CASE("config errors name the key") {
  const fs::path dir = scratch_dir("h-config");
  const Run typo = train_cmd(write_config(dir, "typo.json", R"({"lamda": 0.1})"));
  CHECK(typo.code == kExitConfig);
  CHECK(typo.err.find("lamda") != std::string::npos);
  CHECK(std::count(typo.err.begin(), typo.err.end(), '\n') == 1);

  const Run nested = train_cmd(write_config(dir, "nested.json", R"({"dataset": {"noise": 0.1}})"));
  CHECK(nested.code == kExitConfig);
  CHECK(nested.err.find("dataset.noise") != std::string::npos);

  const Run type = train_cmd(write_config(dir, "type.json", R"({"epochs": "many"})"));
  CHECK(type.code == kExitConfig);
  CHECK(type.err.find("epochs") != std::string::npos);

  const Run missing = train_cmd(dir / "absent.json");
  CHECK(missing.code != kExitOk);
  CHECK(missing.err.find("absent.json") != std::string::npos);

  const Run bad_json = train_cmd(write_config(dir, "bad.json", "{\"epochs\": 3,"));
  CHECK(bad_json.code == kExitConfig);
}

TEST_CASE("defaults follow the published settings") {
  const ExperimentConfig c = parse_config("{}");
  CHECK(c.hp.lambda == doctest::Approx(0.1));
  CHECK(c.hp.threshold == doctest::Approx(0.7));
  CHECK(c.hp.lr_g == doctest::Approx(0.0002));
  CHECK(c.hp.lr_c == doctest::Approx(0.0002));
  CHECK(c.hp.beta1_gan == doctest::Approx(0.5));
  CHECK(c.hp.weight_decay == doctest::Approx(0.001));
  CHECK(c.hp.epochs == 15);
  CHECK(c.variant == Variant::ecgan);
  CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));

  ExperimentConfig edited = parse_config(R"({"lambda": 0.5, "seeds": [3, 4], "variant": "shared"})");
  CHECK(config_to_json(parse_config(config_to_json(edited))) == config_to_json(edited));
  CHECK(edited.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK_THROWS_AS(parse_config(R"({"seed": 1, "seeds": [2]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"variant": "gan"})"), ConfigError);
}

TEST_CASE("seed precedence: flag, then environment, then config") {
  ExperimentConfig c = parse_config(R"({"seed": 5})");
  ::unsetenv("ECGAN_SEED");
  apply_seed_override(c, std::nullopt);
  CHECK(c.seeds == std::vector<std::uint64_t>{5});
  ::setenv("ECGAN_SEED", "9", 1);
  apply_seed_override(c, std::nullopt);
  CHECK(c.seeds == std::vector<std::uint64_t>{9});
  apply_seed_override(c, 12);
  CHECK(c.seeds == std::vector<std::uint64_t>{12});
  ::setenv("ECGAN_SEED", "not-a-number", 1);
  ExperimentConfig d;
  CHECK_THROWS_AS(apply_seed_override(d, std::nullopt), ConfigError);
  ::unsetenv("ECGAN_SEED");

  const fs::path dir = scratch_dir("h-seed");
  REQUIRE(train_cmd(write_config(dir, "c.json", tiny_config(dir / "a")), 4).code == kExitOk);
  const auto rows = lines(slurp(dir / "a" / "metrics.csv"));
  CHECK(rows[1].rfind("ecgan_p100_l0.1_s4,", 0) == 0);
}

TEST_CASE("lambda sweep summarises each value and variant") {
  const fs::path dir = scratch_dir("h-sweep");
  const fs::path cfg = write_config(
      dir, "c.json", tiny_config(dir / "out", R"(, "epochs": 1, "lambda_values": [0, 0.05, 0.1, 0.2, 0.5])"));
  std::ostringstream out, err;
  REQUIRE(cmd_sweep(cfg.string(), "lambda", std::nullopt, out, err) == kExitOk);
  const auto summary = lines(slurp(dir / "out" / "sweep_summary.csv"));
  REQUIRE(summary.size() == 1 + 5 * 3);
  CHECK(summary[0] == "axis,value,variant,n_seeds,mean_test_acc,std_test_acc");
  int ecgan_rows = 0;
  for (std::size_t i = 1; i < summary.size(); ++i) {
    CHECK(summary[i].rfind("lambda,", 0) == 0);
    ecgan_rows += summary[i].find(",ecgan,") != std::string::npos;
  }
  CHECK(ecgan_rows == 5);
  // Baseline cells ignore lambda and are trained once per seed.
  CHECK(fs::exists(dir / "out" / "cells"));
  int baseline_dirs = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "cells"))
    baseline_dirs += e.path().filename().string().rfind("baseline", 0) == 0;
  CHECK(baseline_dirs == 1);
  CHECK(lines(slurp(dir / "out" / "metrics.csv")).size() == 1 + 15);
}

TEST_CASE("percent and strategy sweeps") {
  ExperimentConfig c = parse_config(R"({"dataset_percent": [10, 15, 20, 25, 30], "seeds": [0, 1]})");
  const auto pc = sweep_cells(c, SweepAxis::percent);
  CHECK(pc.size() == 5 * 2 * 3);
  CHECK(axis_value(pc.front(), SweepAxis::percent) == "10");
  CHECK(axis_value(pc.back(), SweepAxis::percent) == "30");

  const auto sc = sweep_cells(c, SweepAxis::strategy);
  CHECK(sc.size() == 4 * 2 * 3);
  std::set<std::pair<bool, bool>> combos;
  std::set<std::string> labels;
  for (const Cell& cell : sc) {
    combos.insert({cell.augment, cell.weight_decay});
    labels.insert(cell.strategy);
    CHECK(cell.percent == 10);
  }
  CHECK(combos.size() == 4);
  CHECK(labels.size() == 4);
  CHECK_THROWS_AS(parse_axis("width"), ConfigError);
}

TEST_CASE("generate writes a tiled grid") {
  const fs::path dir = scratch_dir("h-generate");
  Rng rng(1);
  save_checkpoint(dir / "g3.ckpt", build_generator(NetworkSpec{Role::generator, 32, 3, 3, 8, false, 1}, rng));
  std::ostringstream out, err;
  REQUIRE(cmd_generate((dir / "g3.ckpt").string(), 16, std::nullopt, (dir / "g.ppm").string(), 0, out, err) == kExitOk);
  const std::string ppm = slurp(dir / "g.ppm");
  CHECK(ppm.rfind("P6\n128 128\n255\n", 0) == 0);
  CHECK(ppm.size() == std::string("P6\n128 128\n255\n").size() + 128 * 128 * 3);
  std::ifstream in(dir / "g.ppm", std::ios::binary);
  const PnmImage img = read_pnm(in);
  CHECK(img.channels == 3);

  save_checkpoint(dir / "g1.ckpt", build_generator(NetworkSpec{Role::generator, 16, 1, 3, 8, false, 1}, rng));
  REQUIRE(cmd_generate((dir / "g1.ckpt").string(), 5, std::nullopt, (dir / "g.pgm").string(), 0, out, err) == kExitOk);
  std::ifstream in1(dir / "g.pgm", std::ios::binary);
  const PnmImage gray = read_pnm(in1);
  CHECK(gray.channels == 1);
  CHECK(gray.width == 3 * 16);
  CHECK(gray.height == 2 * 16);

  // Same seed, same grid.
  REQUIRE(cmd_generate((dir / "g3.ckpt").string(), 16, std::nullopt, (dir / "h.ppm").string(), 0, out, err) == kExitOk);
  CHECK(slurp(dir / "h.ppm") == ppm);

  std::ostringstream e2;
  CHECK(cmd_generate((dir / "g3.ckpt").string(), 4, 1, (dir / "x.ppm").string(), 0, out, e2) == kExitContract);
  CHECK(e2.str().find("conditional") != std::string::npos);

  save_checkpoint(dir / "gc.ckpt", build_generator(NetworkSpec{Role::generator, 16, 1, 3, 8, true, 1}, rng));
  CHECK(cmd_generate((dir / "gc.ckpt").string(), 4, 2, (dir / "c.pgm").string(), 0, out, err) == kExitOk);
  CHECK(cmd_generate((dir / "gc.ckpt").string(), 4, 3, (dir / "c.pgm").string(), 0, out, err) != kExitOk);
}

TEST_CASE("tile grid arithmetic") {
  Tensor imgs = Tensor::full({7, 1, 2, 2}, -1);
  imgs.data()[4] = 1;  // image 1, pixel 0
  const PnmImage g = tile_grid(imgs);
  CHECK(g.width == 3 * 2);
  CHECK(g.height == 3 * 2);
  CHECK(g.pixels[0] == 0);
  CHECK(g.pixels[2] == 255);
  // Unused tiles stay black.
  CHECK(g.pixels[static_cast<std::size_t>(5 * 6 + 5)] == 0);
}

TEST_CASE("eval reports accuracy and checks the role") {
  const fs::path dir = scratch_dir("h-eval");
  Rng rng(2);
  const NetworkSpec cs{Role::classifier, 16, 1, 3, 8, false, 1};
  save_checkpoint(dir / "c.ckpt", build_classifier(cs, rng));
  save_checkpoint(dir / "g.ckpt", build_generator(NetworkSpec{Role::generator, 16, 1, 3, 8, false, 1}, rng));
  save_checkpoint(dir / "s.ckpt", build_shared_discriminator(NetworkSpec{Role::shared_discriminator, 16, 1, 3, 8, false, 1}, rng));

  const std::regex format(R"(accuracy=(0\.\d{4}|1\.0000)\n)");
  for (const char* ck : {"c.ckpt", "s.ckpt"}) {
    std::ostringstream out, err;
    REQUIRE(cmd_eval((dir / ck).string(), "synth:n=10,noise=0.2", out, err) == kExitOk);
    CHECK(std::regex_match(out.str(), format));
  }

  std::ostringstream out, err;
  CHECK(cmd_eval((dir / "g.ckpt").string(), "synth:n=10", out, err) == kExitContract);
  CHECK(err.str().find("generator") != std::string::npos);

  std::ostringstream o2, e2;
  CHECK(cmd_eval((dir / "c.ckpt").string(), "synth:bogus=1", o2, e2) != kExitOk);
  CHECK(e2.str().find("bogus") != std::string::npos);

  // A classifier trained on its own data beats chance.
  const fs::path tdir = dir / "trained";
  const fs::path cfg = write_config(
      dir, "t.json", tiny_config(tdir, R"(, "variant": "baseline", "epochs": 6, "write_checkpoints": true, "dataset": {"image_size": 16, "n_per_class": 30, "test_n_per_class": 10, "noise_sigma": 0.1})"));
  REQUIRE(train_cmd(cfg).code == kExitOk);
  std::ostringstream o3, e3;
  REQUIRE(cmd_eval((tdir / "checkpoints" / "baseline_p100_l0.1_s0" / "classifier.ckpt").string(),
                   "synth:n=30,noise=0.1,seed=1", o3, e3) == kExitOk);
  CHECK(std::stod(o3.str().substr(9)) > 1.0 / 3);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch_dir("h-cli");
  CHECK(cli("") == kExitUsage);
  CHECK(cli("frobnicate") == kExitUsage);
  CHECK(cli("sweep x.json --axis width") == kExitUsage);
  CHECK(cli("generate g.ckpt --n 0 --out x.pgm") == kExitUsage);
  CHECK(cli("--help") == kExitOk);
  CHECK(cli("train " + write_config(dir, "typo.json", R"({"lamda": 1})").string()) == kExitConfig);
  CHECK(cli("eval " + (dir / "missing.ckpt").string() + " --data synth:") == kExitData);

  // ECGAN_SEED reaches the CLI; the flag wins over it.
  const fs::path cfg = write_config(dir, "c.json", tiny_config(dir / "out", R"(, "epochs": 1)"));
  REQUIRE(cli("train " + cfg.string(), "ECGAN_SEED=6") == kExitOk);
  CHECK(lines(slurp(dir / "out" / "metrics.csv"))[1].rfind("ecgan_p100_l0.1_s6,", 0) == 0);
  REQUIRE(cli("train " + cfg.string() + " --seed 8", "ECGAN_SEED=6") == kExitOk);
  CHECK(lines(slurp(dir / "out" / "metrics.csv"))[1].rfind("ecgan_p100_l0.1_s8,", 0) == 0);
}
