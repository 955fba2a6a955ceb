#pragma once

#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "idpt/bpe.hpp"
#include "idpt/corpus.hpp"
#include "test_util.hpp"

namespace idpt::testing {

inline std::vector<RawRecord> minicorpus_records() { return ingest_all(data_dir() / "minicorpus.jsonl").records; }

inline std::vector<std::string> minicorpus_code() {
  std::vector<std::string> out;
  for (const auto& r : minicorpus_records()) out.push_back(r.code);
  return out;
}

// Code plus docstrings, the text the pipeline trains its tokenizer on.
inline std::vector<std::string> minicorpus_text() {
  std::vector<std::string> out;
  for (const auto& r : minicorpus_records()) {
    out.push_back(r.code);
    if (r.docstring) out.push_back(*r.docstring);
  }
  return out;
}

inline std::vector<std::string> nl_corpus() {
  std::ifstream in(data_dir() / "nl_corpus.txt");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline const SubwordTokenizer& code_tokenizer() {
  static const SubwordTokenizer tok = SubwordTokenizer::train(minicorpus_text(), BpeTrainOptions{.vocab_size = 2000});
  return tok;
}

inline const SubwordTokenizer& nl_tokenizer() {
  static const SubwordTokenizer tok = SubwordTokenizer::train(nl_corpus(), BpeTrainOptions{.vocab_size = 2000});
  return tok;
}

inline std::string random_utf8(std::mt19937& gen, std::size_t max_codepoints) {
  std::string s;
  const std::size_t n = gen() % (max_codepoints + 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t cp;
    switch (gen() % 5) {
      case 0: cp = gen() % 0x80; break;
      case 1: cp = 0x20 + gen() % 0x5f; break;
      case 2: cp = 0x80 + gen() % (0x800 - 0x80); break;
      case 3:
        cp = 0x800 + gen() % (0x10000 - 0x800);
        if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0x4E2D;
        break;
      default: cp = 0x10000 + gen() % (0x110000 - 0x10000); break;
    }
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xC0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      s += static_cast<char>(0xF0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

}  // namespace idpt::testing
