#include <array>
#include <set>

#include "bpe_fixtures.hpp"
#include "doctest.h"
#include "fuzz_docs.hpp"
#include "idpt/error.hpp"
#include "idpt/metrics.hpp"

using namespace idpt;
using namespace idpt::testing;

namespace {

std::vector<TokenId> word(const std::string& w) { return encode_word(code_tokenizer(), w); }

std::vector<TokenId> concat(std::initializer_list<std::vector<TokenId>> parts) {
  std::vector<TokenId> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

CodeDocument mini_doc(const std::string& code, std::optional<std::string> doc = std::nullopt) {
  return normalize(RawRecord{code, std::move(doc), "mini"}, registry());
}

}  // namespace

TEST_CASE("mask budget rounds half up") {
  CHECK(mask_budget(20, 0.15) == 3);
  CHECK(mask_budget(10, 0.15) == 2);  // 1.5 -> 2
  CHECK(mask_budget(100, 0.15) == 15);
  CHECK(mask_budget(0, 0.15) == 0);
  CHECK(mask_budget(7, 1.0) == 7);
  CHECK_THROWS_AS(mask_budget(5, 1.5), InvalidArgument);
}

TEST_CASE("sample_spans basic cases") {
  Rng rng(1);
  const auto plan = sample_spans(20, 0.15, rng);
  CHECK(plan.masked_words() == 3);
  CHECK(sample_spans(50, 0.0, rng).spans.empty());
  CHECK(sample_spans(0, 0.15, rng).spans.empty());
  const auto all = sample_spans(10, 1.0, rng);
  CHECK(all.masked_words() == 10);
}

TEST_CASE("sample_spans invariants") {
  Rng rng(2);
  for (int trial = 0; trial < 5000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(0, 300));
    const double rate = rng.uniform();
    const auto plan = sample_spans(n, rate, rng);
    CHECK(plan.masked_words() == mask_budget(n, rate));
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < plan.spans.size(); ++i) {
      const auto& s = plan.spans[i];
      CHECK(s.length >= kMinSpanLength);
      CHECK(s.length <= kMaxSpanLength);
      if (i > 0) CHECK(s.start >= prev_end);
      CHECK(s.start + s.length <= n);
      prev_end = s.start + s.length;
    }
  }
}

TEST_CASE("sample_spans statistics at 15 percent") {
  Rng rng(3);
  std::size_t masked = 0, spans = 0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const auto plan = sample_spans(100, 0.15, rng);
    masked += plan.masked_words();
    spans += plan.spans.size();
  }
  CHECK(static_cast<double>(masked) / (100.0 * trials) == doctest::Approx(0.15).epsilon(0.01));
  CHECK(static_cast<double>(masked) / static_cast<double>(spans) == doctest::Approx(3.0).epsilon(0.03));
}

TEST_CASE("sample_spans is reproducible from the seed") {
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const auto pa = sample_spans(80, 0.15, a);
    const auto pb = sample_spans(80, 0.15, b);
    CHECK(pa.spans == pb.spans);
    CHECK(pa.seed == pb.seed);
  }
}

TEST_CASE("msp on four words") {
  const CodeDocument doc{{}, {"a", "b", "c", "d"}, "mini", {1, 1, 1, 1}};
  SpanPlan plan;
  plan.spans = {{1, 2}};
  const auto inst = build_msp(doc, code_tokenizer(), plan);
  CHECK(inst.objective == Objective::kMsp);
  CHECK(inst.source_ids == concat({{kClsId, kSepId}, word("a"), {kMask0Id}, word("d"), {kSepId}}));
  CHECK(inst.target_ids == concat({{kMask0Id}, word("b"), word("c")}));
}

TEST_CASE("msp with an empty plan leaves the source intact") {
  const auto doc = mini_doc("int a = b;", "sets a");
  const auto inst = build_msp(doc, code_tokenizer(), SpanPlan{});
  CHECK(inst.source_ids == encode_document(doc, code_tokenizer()));
  CHECK(inst.target_ids.empty());
}

TEST_CASE("msp sentinels increase in source and target") {
  const auto doc = mini_doc("int a = b + c * d - e;");
  SpanPlan plan;
  plan.spans = {{1, 1}, {4, 2}};
  const auto inst = build_msp(doc, code_tokenizer(), plan);
  std::vector<TokenId> src, tgt;
  for (auto id : inst.source_ids) {
    if (SubwordTokenizer::is_sentinel(id)) src.push_back(id);
  }
  for (auto id : inst.target_ids) {
    if (SubwordTokenizer::is_sentinel(id)) tgt.push_back(id);
  }
  CHECK(src == std::vector<TokenId>{kMask0Id, kMask0Id + 1});
  CHECK(tgt == src);
}

TEST_CASE("msp span straddling the NL/PL boundary carries the delimiter") {
  const CodeDocument doc{{"sum", "values"}, {"x", "y"}, "mini", {1, 1}};
  SpanPlan plan;
  plan.spans = {{1, 2}};
  const auto inst = build_msp(doc, code_tokenizer(), plan);
  CHECK(inst.source_ids == concat({{kClsId}, word("sum"), {kMask0Id}, word("y"), {kSepId}}));
  CHECK(inst.target_ids == concat({{kMask0Id}, word("values"), {kSepId}, word("x")}));
  CHECK(splice_msp(inst) == encode_document(doc, code_tokenizer()));
}

TEST_CASE("msp errors") {
  CodeDocument doc;
  doc.language = "mini";
  for (int i = 0; i < 300; ++i) {
    doc.code_tokens.push_back("x");
    doc.identifier_labels.push_back(1);
  }
  SpanPlan plan;
  for (std::size_t i = 0; i < 101; ++i) plan.spans.push_back({i * 2, 1});
  CHECK_THROWS_AS(build_msp(doc, code_tokenizer(), plan), SentinelExhausted);
  plan.spans = {{299, 2}};
  CHECK_THROWS_AS(build_msp(doc, code_tokenizer(), plan), InvalidArgument);
  plan.spans = {{5, 3}, {6, 1}};
  CHECK_THROWS_AS(build_msp(doc, code_tokenizer(), plan), InvalidArgument);
}

TEST_CASE("msp drops trailing spans when the target is too long") {
  const CodeDocument doc{{}, {"a", "b", "c", "d", "e", "f"}, "mini", {1, 1, 1, 1, 1, 1}};
  SpanPlan plan;
  plan.spans = {{0, 2}, {3, 2}};
  const auto full = build_msp(doc, code_tokenizer(), plan);
  const auto cut = build_msp(doc, code_tokenizer(), plan, BuildOptions{512, full.target_ids.size() - 1});
  CHECK(sentinel_count(cut.target_ids) == 1);
  CHECK(splice_msp(cut) == encode_document(doc, code_tokenizer()));
}

TEST_CASE("msp reconstruction and whole-word fuzz") {
  Rng rng(21);
  const auto& tok = code_tokenizer();
  for (int trial = 0; trial < 1000; ++trial) {
    const auto doc = random_document(rng);
    const auto plan = sample_spans(doc.nl_tokens.size() + doc.code_tokens.size(), rng.uniform() * 0.5, rng);
    const auto inst = build_msp(doc, tok, plan);
    const auto spliced = splice_msp(inst);
    REQUIRE(spliced.has_value());
    CHECK(*spliced == encode_document(doc, tok));
    // Each target span is a run of whole words.
    std::size_t si = 0;
    for (const auto& s : plan.spans) {
      std::vector<TokenId> expect;
      for (std::size_t p = s.start; p < s.start + s.length; ++p) {
        const std::size_t n = doc.nl_tokens.size();
        if (p == n && s.start < p) expect.push_back(kSepId);
        const auto w = word(p < n ? doc.nl_tokens[p] : doc.code_tokens[p - n]);
        expect.insert(expect.end(), w.begin(), w.end());
      }
      const auto segs = sentinel_segments(inst.target_ids);
      REQUIRE(si < segs.size());
      CHECK(segs[si].second == expect);
      ++si;
    }
  }
}

TEST_CASE("it projects labels onto subwords") {
  const auto& tok = code_tokenizer();
  std::optional<std::string> split, whole;
  for (const char* w : {"qz", "zqx", "binarySearch", "xyzzy", "wq"}) {
    if (!split && word(w).size() == 2) split = w;
  }
  for (const char* w : {"return", "int", "a", "i"}) {
    if (!whole && word(w).size() == 1) whole = w;
  }
  REQUIRE(split);
  REQUIRE(whole);
  const CodeDocument doc{{}, {*split, *whole}, "mini", {1, 0}};
  const auto inst = build_it(doc, tok);
  CHECK(inst.objective == Objective::kIt);
  REQUIRE(inst.tag_labels);
  CHECK(*inst.tag_labels == std::vector<std::uint8_t>{1, 1, 0});
  CHECK(inst.source_ids == encode_document(doc, tok));
}

TEST_CASE("it labels align with the PL segment") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto doc = random_document(rng);
    const auto inst = build_it(doc, code_tokenizer());
    const auto seg = pl_segment(inst.source_ids);
    CHECK(inst.tag_labels->size() == seg.end - seg.begin);
  }
  const CodeDocument zeros{{"doc"}, {"int", ";"}, "mini", {0, 0}};
  const auto zero_inst = build_it(zeros, code_tokenizer());
  for (auto y : *zero_inst.tag_labels) CHECK(y == 0);
}

TEST_CASE("it on a binary search snippet") {
  const auto doc = normalize(RawRecord{"def binarySearch(arr, x):\n    if x:\n        return arr", std::nullopt, "python"},
                             registry());
  const auto inst = build_it(doc, code_tokenizer());
  const auto seg = pl_segment(inst.source_ids);
  std::size_t pos = seg.begin;
  for (std::size_t i = 0; i < doc.code_tokens.size(); ++i) {
    const auto n = word(doc.code_tokens[i]).size();
    const bool ident = doc.code_tokens[i] == "binarySearch" || doc.code_tokens[i] == "arr" || doc.code_tokens[i] == "x";
    for (std::size_t k = 0; k < n; ++k) CHECK((*inst.tag_labels)[pos - seg.begin + k] == (ident ? 1 : 0));
    pos += n;
  }
}

TEST_CASE("mip masks identifiers with shared sentinels") {
  const auto doc = mini_doc("a = a + b");
  const auto inst = build_mip(doc, code_tokenizer());
  REQUIRE(inst);
  CHECK(inst->objective == Objective::kMip);
  CHECK(inst->source_ids ==
        concat({{kClsId, kSepId, kMask0Id}, word("="), {kMask0Id}, word("+"), {kMask0Id + 1, kSepId}}));
  CHECK(inst->target_ids == concat({{kMask0Id}, word("a"), {kMask0Id + 1}, word("b")}));
}

TEST_CASE("mip single identifier") {
  const auto inst = build_mip(mini_doc("return x;"), code_tokenizer());
  REQUIRE(inst);
  CHECK(std::count(inst->source_ids.begin(), inst->source_ids.end(), kMask0Id) == 1);
  CHECK(inst->target_ids == concat({{kMask0Id}, word("x")}));
}

TEST_CASE("mip without identifiers signals skip") {
  CHECK_FALSE(build_mip(mini_doc("return 1;"), code_tokenizer()).has_value());
}

TEST_CASE("mip rejects more than 100 distinct identifiers") {
  CodeDocument doc;
  doc.language = "mini";
  for (int i = 0; i < 101; ++i) {
    doc.code_tokens.push_back("v" + std::to_string(i));
    doc.identifier_labels.push_back(1);
  }
  CHECK_THROWS_AS(build_mip(doc, code_tokenizer()), SentinelExhausted);
}

TEST_CASE("mip consistency fuzz") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto doc = random_document(rng);
    const auto inst = build_mip(doc, code_tokenizer());
    if (!inst) {
      for (auto y : doc.identifier_labels) CHECK(y == 0);
      continue;
    }
    CHECK(check_mip(doc, *inst, code_tokenizer()) == "");
  }
}

TEST_CASE("dual pair") {
  const auto& tok = code_tokenizer();
  const auto doc = normalize(RawRecord{"int f() { return 1; }", "returns one", "java"}, registry());
  const auto [nl2pl, pl2nl] = build_dual_pair(doc, tok);
  CHECK(nl2pl.objective == Objective::kDualNl2Pl);
  CHECK(pl2nl.objective == Objective::kDualPl2Nl);
  CHECK(nl2pl.source_ids[0] == kClsId);
  CHECK(nl2pl.source_ids[1] == tok.special_id("<en>"));
  CHECK(pl2nl.source_ids[1] == tok.special_id("<java>"));
  std::vector<TokenId> nl, pl;
  for (const auto& w : doc.nl_tokens) {
    const auto p = word(w);
    nl.insert(nl.end(), p.begin(), p.end());
  }
  for (const auto& w : doc.code_tokens) {
    const auto p = word(w);
    pl.insert(pl.end(), p.begin(), p.end());
  }
  CHECK(nl2pl.target_ids == pl);
  CHECK(pl2nl.target_ids == nl);
  CHECK(std::vector<TokenId>(nl2pl.source_ids.begin() + 2, nl2pl.source_ids.end() - 1) == nl);
  CHECK(std::vector<TokenId>(pl2nl.source_ids.begin() + 2, pl2nl.source_ids.end() - 1) == pl);
  CHECK_THROWS_AS(build_dual_pair(mini_doc("int a;"), tok), InvalidArgument);
}

TEST_CASE("dual instances double the bimodal count") {
  const auto docs = normalize_all(minicorpus_records(), registry());
  std::size_t bimodal = 0;
  for (const auto& d : docs) bimodal += d.bimodal() ? 1 : 0;
  CHECK(bimodal > 0);
  CHECK(build_dual_instances(docs, code_tokenizer()).size() == 2 * bimodal);
}

TEST_CASE("denoising task choice is uniform") {
  Rng rng(17);
  std::array<int, 3> counts{};
  const int draws = 300000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(pick_denoising_task(rng))];
  for (int c : counts) CHECK(std::abs(static_cast<double>(c) / draws - 1.0 / 3.0) < 0.01);
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(pick_denoising_task(a) == pick_denoising_task(b));
}

TEST_CASE("denoise instances are reproducible and order independent") {
  const auto docs = normalize_all(minicorpus_records(), registry());
  const auto a = build_denoise_instances(docs, code_tokenizer(), 42);
  const auto b = build_denoise_instances(docs, code_tokenizer(), 42);
  CHECK(a == b);
  // Per-document seeds: instances of document 5 do not depend on the others.
  const auto full_msp = build_msp(fit_document(docs[5], code_tokenizer(), {}), code_tokenizer(), [&] {
    Rng rng(mix_seed(42, 5));
    return sample_spans(docs[5].nl_tokens.size() + docs[5].code_tokens.size(), kDefaultCorruptionRate, rng);
  }());
  bool found = false;
  for (const auto& inst : a) found = found || inst == full_msp;
  CHECK(found);
}

TEST_CASE("long documents are clipped at whole words") {
  CodeDocument doc;
  doc.language = "mini";
  doc.nl_tokens = {"long", "doc"};
  for (int i = 0; i < 400; ++i) {
    doc.code_tokens.push_back("v" + std::to_string(i));
    doc.identifier_labels.push_back(1);
  }
  const BuildOptions opts{64, 32};
  const auto fitted = fit_document(doc, code_tokenizer(), opts);
  CHECK(encode_document(fitted, code_tokenizer()).size() <= 64);
  CHECK(fitted.nl_tokens == doc.nl_tokens);
  const auto mip = build_mip(fitted, code_tokenizer(), opts);
  REQUIRE(mip);
  CHECK(mip->target_ids.size() <= 32);
}

TEST_CASE("pl segment") {
  const std::vector<TokenId> src{kClsId, 200, kSepId, 300, 301, kSepId};
  const auto seg = pl_segment(src);
  CHECK(seg.begin == 3);
  CHECK(seg.end == 5);
}

TEST_CASE("instances round-trip through json lines") {
  TempDir dir("inst");
  const auto docs = normalize_all(minicorpus_records(), registry());
  const auto inst = build_denoise_instances(std::vector<CodeDocument>(docs.begin(), docs.begin() + 20), code_tokenizer(), 1);
  write_instances(dir / "i.jsonl", inst);
  CHECK(read_instances(dir / "i.jsonl") == inst);
  CHECK(objective_from_string("DUAL_PL2NL") == Objective::kDualPl2Nl);
  CHECK_THROWS_AS(objective_from_string("NOPE"), FormatError);
}
