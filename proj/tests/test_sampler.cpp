#include <fstream>
#include <numeric>

#include "bpe_fixtures.hpp"
#include "doctest.h"
#include "idpt/error.hpp"
#include "idpt/sampler.hpp"

using namespace idpt;
using namespace idpt::testing;

namespace {

// tests/oracles/mixture_probs.py 0.7 900 100 (50-digit arithmetic).
constexpr double kOracle900 = 0.82318212236958793665;
constexpr double kOracle100 = 0.17681787763041206335;

}  // namespace

TEST_CASE("mixture probabilities for 900/100 at 0.7") {
  const std::vector<std::size_t> sizes{900, 100};
  const auto q = mixture_probs(sizes, 0.7);
  CHECK(std::abs(q[0] - kOracle900) < 1e-12);
  CHECK(std::abs(q[1] - kOracle100) < 1e-12);
}

TEST_CASE("alpha one is proportional and alpha zero uniform") {
  const std::vector<std::size_t> sizes{5, 20, 75};
  const auto p = mixture_probs(sizes, 1.0);
  CHECK(p[0] == 0.05);
  CHECK(p[1] == 0.2);
  CHECK(p[2] == 0.75);
  for (double q : mixture_probs(sizes, 0.0)) CHECK(q == 1.0 / 3.0);
}

TEST_CASE("mixture errors") {
  CHECK_THROWS_AS(mixture_probs(std::vector<std::size_t>{3, 0}, 0.7), InvalidArgument);
  CHECK_THROWS_AS(mixture_probs(std::vector<std::size_t>{}, 0.7), InvalidArgument);
  CHECK_THROWS_AS(mixture_probs(std::vector<std::size_t>{3}, -0.1), InvalidArgument);
}

TEST_CASE("mixture normalization, permutation and balancing") {
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(rng.uniform_int(1, 12)));
    for (auto& s : sizes) s = static_cast<std::size_t>(rng.uniform_int(1, 1000000));
    const double alpha = rng.uniform() * 2.0;
    const auto q = mixture_probs(sizes, alpha);
    CHECK(std::abs(std::accumulate(q.begin(), q.end(), 0.0) - 1.0) < 1e-12);
    for (double x : q) CHECK(x > 0.0);

    std::vector<std::size_t> rev(sizes.rbegin(), sizes.rend());
    const auto qr = mixture_probs(rev, alpha);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(qr[q.size() - 1 - i] == doctest::Approx(q[i]).epsilon(1e-12));

    if (sizes.size() >= 2 && sizes[0] < sizes[1] && alpha > 0.0 && alpha < 1.0) {
      CHECK(q[0] / q[1] > static_cast<double>(sizes[0]) / static_cast<double>(sizes[1]));
    }
  }
}

TEST_CASE("sampling frequencies follow the mixture") {
  const TaskMixture mix({{"big", 900, "", {}, {}}, {"small", 100, "", {}, {}}}, 0.7);
  Rng rng(12);
  int small = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) small += mix.sample_task(rng) == "small";
  CHECK(std::abs(static_cast<double>(small) / draws - kOracle100) < 0.01);

  const TaskMixture single({{"only", 7, "", {}, {}}}, 0.7);
  for (int i = 0; i < 100; ++i) CHECK(single.sample_task(rng) == "only");

  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) CHECK(mix.sample_index(a) == mix.sample_index(b));
}

TEST_CASE("mixture recomputes on change") {
  const TaskMixture mix({{"a", 900, "", {}, {}}, {"b", 100, "", {}, {}}}, 0.7);
  CHECK(mix.rates()[0] == 0.9);
  const auto flat = mix.with_alpha(0.0);
  CHECK(flat.probs()[0] == 0.5);
  const std::vector<std::size_t> sizes{100, 900};
  const auto swapped = mix.with_sizes(sizes);
  CHECK(std::abs(swapped.probs()[1] - kOracle900) < 1e-12);
  CHECK(mix.task("b").size == 100);
  CHECK_THROWS_AS(mix.task("c"), InvalidArgument);
}

TEST_CASE("mixture config file") {
  TempDir dir("mix");
  std::ofstream(dir / "train.jsonl") << "{}\n{}\n{}\n";
  std::ofstream(dir / "mix.json") << R"({"alpha": 0.5, "tasks": [
    {"name": "translate", "dataset": "train.jsonl", "control_code": "Translate Java to CSharp:"},
    {"name": "summarize", "size": 9, "control_code": "Summarize Python:"}]})";
  const auto mix = TaskMixture::load(dir / "mix.json", std::nullopt, [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
  });
  CHECK(mix.alpha() == 0.5);
  CHECK(mix.tasks()[0].size == 3);
  CHECK(mix.tasks()[0].dataset == dir / "train.jsonl");
  CHECK(mix.tasks()[1].size == 9);
  CHECK(TaskMixture::load(dir / "mix.json", 0.7, [](const std::filesystem::path&) { return std::size_t{1}; }).alpha() ==
        0.7);
  std::ofstream(dir / "bad.json") << R"({"tasks": [{"name": "x"}]})";
  CHECK_THROWS_AS(TaskMixture::load(dir / "bad.json"), FormatError);
  CHECK_THROWS_AS(TaskMixture::load(dir / "none.json"), IoError);
}

TEST_CASE("control codes") {
  const auto& tok = code_tokenizer();
  TrainingInstance inst{{kClsId, 500, 501, kSepId}, {600}, Objective::kFinetune, {}, {}};
  const std::string code = "Translate Java to CSharp:";
  const auto prefixed = apply_control_code(inst, code, tok);
  const auto ids = tok.encode_ordinary(code);
  REQUIRE(prefixed.source_ids.size() == inst.source_ids.size() + ids.size());
  CHECK(prefixed.source_ids[0] == kClsId);
  CHECK(std::equal(ids.begin(), ids.end(), prefixed.source_ids.begin() + 1));
  CHECK(prefixed.target_ids == inst.target_ids);
  CHECK(apply_control_code(inst, "", tok) == inst);
  CHECK_THROWS_AS(apply_control_code(prefixed, code, tok), InvalidArgument);
}
