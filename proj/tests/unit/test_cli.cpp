#include <doctest.h>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "throatline/cli.hpp"
#include "throatline/throatsim.hpp"
#include "throatline/wav.hpp"

using namespace throatline;
using test_support::TempDir;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "throatline");
  return cli_dispatch(args);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors and help") {
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"simulate"}) == 1);
  CHECK(run({"enhance", "--model", "/no/such", "--in", "x.wav", "--out", "y.wav"}) == 1);
}

TEST_CASE("serve and live without an audio source are runtime errors") {
  CHECK(run({"serve", "--port", "0"}) == 2);
  CHECK(run({"live"}) == 2);
}

TEST_CASE("simulate, pretrain, enhance and eval on a tiny corpus") {
  TempDir dir("tl_cli");
  std::filesystem::create_directories(dir / "clean");
  wav_write(synthetic_utterance(2.0, 1), dir / "clean" / "a.wav");
  wav_write(synthetic_utterance(2.0, 2), dir / "clean" / "b.wav");
  const std::string config = (dir / "cfg.json").string();
  test_support::write_text(dir / "cfg.json",
                            R"({"codec":{"embed_dim":8,"hidden_dim":16,"num_quantizers":2,"codebook_size":16}})");

  REQUIRE(run({"simulate", "--in", (dir / "clean").string(), "--out", (dir / "pairs").string(), "--seed", "5"}) ==
          0);
  const std::string manifest = (dir / "pairs" / "manifest.csv").string();
  CHECK(std::filesystem::exists(manifest));

  REQUIRE(run({"train-pretrain", "--pairs", manifest, "--out", (dir / "codec.bin").string(), "--epochs", "2",
               "--config", config}) == 0);
  REQUIRE(run({"train-finetune", "--model", (dir / "codec.bin").string(), "--pairs", manifest, "--out",
               (dir / "enh.bin").string(), "--epochs", "2", "--config", config}) == 0);

  const auto input = (dir / "clean" / "a.wav").string();
  REQUIRE(run({"enhance", "--model", (dir / "enh.bin").string(), "--in", input, "--out",
               (dir / "bypass.wav").string(), "--bypass"}) == 0);
  const SampleBuffer in = wav_read(input);
  const SampleBuffer out = wav_read(dir / "bypass.wav");
  CHECK(out.size() == in.size());
  CHECK(out.samples() == in.samples());

  REQUIRE(run({"enhance", "--model", (dir / "enh.bin").string(), "--in", input, "--out",
               (dir / "enh.wav").string()}) == 0);
  CHECK(wav_read(dir / "enh.wav").size() == in.size());

  REQUIRE(run({"eval", "--pairs", manifest, "--report", (dir / "report.csv").string(), "--model",
               (dir / "enh.bin").string()}) == 0);
  const auto summary = nlohmann::json::parse(test_support::read_text(dir / "report.json"));
  CHECK(summary["files"].get<int>() == 2);
}

TEST_CASE("config files are validated") {
  TempDir dir("tl_cli_cfg");
  test_support::write_text(dir / "bad.json", R"({"channel":{"cutof_hz":1500}})");
  CHECK(run({"simulate", "--out", (dir / "o").string(), "--config", (dir / "bad.json").string()}) == 2);
  test_support::write_text(dir / "synth.json", R"({"synthetic":{"files":2,"seconds":1.5,"seed":4}})");
  CHECK(run({"simulate", "--out", (dir / "o").string(), "--config", (dir / "synth.json").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "o" / "source" / "synth_0001.wav"));
}

}  // TEST_SUITE
