#pragma once

#include <string>
#include <vector>

#include "bpe_fixtures.hpp"
#include "idpt/model/seq2seq.hpp"
#include "idpt/rng.hpp"

namespace idpt::testing {

inline const std::vector<CodeDocument>& mini_documents() {
  static const std::vector<CodeDocument> docs = normalize_all(minicorpus_records(), registry());
  return docs;
}

// A smaller vocabulary keeps the output projection cheap for training tests.
inline const SubwordTokenizer& small_tokenizer() {
  static const SubwordTokenizer tok = SubwordTokenizer::train(minicorpus_text(), BpeTrainOptions{.vocab_size = 700});
  return tok;
}

inline ModelConfig small_config(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 32;
  c.num_heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.feedforward_dim = 64;
  c.max_src_len = 160;
  c.max_tgt_len = 64;
  c.dropout = 0.0;
  return c;
}

// Mini-language functions from five templates with freshly drawn names.
struct MiniNames {
  std::string f, a, s, i, t, v, lo, hi;
};

inline std::string random_name(Rng& rng) {
  static const std::vector<std::string> kHeads{"sum", "val", "acc", "buf", "node", "item", "tmp", "cur", "lst",
                                               "key", "pos", "elem", "data", "res", "num", "ptr"};
  static const std::vector<std::string> kTails{"", "", "s", "2", "_x", "Count", "Max", "Idx", "Val", "List", "Total"};
  return kHeads[rng.uniform_int(0, kHeads.size() - 1)] + kTails[rng.uniform_int(0, kTails.size() - 1)];
}

inline MiniNames random_names(Rng& rng) {
  // Draw until all eight are distinct so renaming never merges two roles.
  for (;;) {
    MiniNames n{random_name(rng), random_name(rng), random_name(rng), random_name(rng),
                random_name(rng), random_name(rng), random_name(rng), random_name(rng)};
    const std::vector<std::string> all{n.f, n.a, n.s, n.i, n.t, n.v, n.lo, n.hi};
    bool distinct = true;
    for (std::size_t x = 0; x < all.size() && distinct; ++x) {
      for (std::size_t y = x + 1; y < all.size(); ++y) distinct = distinct && all[x] != all[y];
    }
    if (distinct) return n;
  }
}

inline constexpr std::size_t kMiniTemplates = 5;

inline std::string mini_function(std::size_t kind, const MiniNames& n) {
  const std::string& f = n.f; const std::string& a = n.a; const std::string& s = n.s; const std::string& i = n.i;
  switch (kind % kMiniTemplates) {
    case 0:
      return "int " + f + "(int " + a + "[], int n) {\n    int " + s + " = 0;\n    for (int " + i + " = 0; " + i +
             " < n; " + i + "++) {\n        " + s + " += " + a + "[" + i + "];\n    }\n    return " + s + ";\n}";
    case 1:
      return "int " + f + "(int " + a + "[], int n) {\n    int " + s + " = " + a + "[0];\n    for (int " + i +
             " = 1; " + i + " < n; " + i + "++) {\n        if (" + a + "[" + i + "] > " + s + ") {\n            " + s +
             " = " + a + "[" + i + "];\n        }\n    }\n    return " + s + ";\n}";
    case 2:
      return "int " + f + "(int " + a + "[], int n, int " + n.t + ") {\n    int " + s + " = 0;\n    int " + i +
             " = 0;\n    while (" + i + " < n) {\n        if (" + a + "[" + i + "] == " + n.t + ") {\n            " +
             s + "++;\n        }\n        " + i + "++;\n    }\n    return " + s + ";\n}";
    case 3:
      return "bool " + f + "(int " + a + "[], int n, int " + n.t + ") {\n    for (int " + i + " = 0; " + i +
             " < n; " + i + "++) {\n        if (" + a + "[" + i + "] == " + n.t +
             ") {\n            return true;\n        }\n    }\n    return false;\n}";
    default:
      return "int " + f + "(int " + n.v + ", int " + n.lo + ", int " + n.hi + ") {\n    if (" + n.v + " < " + n.lo +
             ") {\n        return " + n.lo + ";\n    }\n    if (" + n.v + " > " + n.hi + ") {\n        return " +
             n.hi + ";\n    }\n    return " + n.v + ";\n}";
  }
}

inline CodeDocument synthetic_mini(Rng& rng, std::size_t kind) {
  return normalize(RawRecord{mini_function(kind, random_names(rng)), std::nullopt, "mini"}, registry());
}

}  // namespace idpt::testing
