#include "idpt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include "idpt/error.hpp"

namespace idpt {

namespace {

constexpr std::pair<Objective, std::string_view> kObjectiveNames[] = {
    {Objective::kMsp, "MSP"},
    {Objective::kIt, "IT"},
    {Objective::kMip, "MIP"},
    {Objective::kDualNl2Pl, "DUAL_NL2PL"},
    {Objective::kDualPl2Nl, "DUAL_PL2NL"},
    {Objective::kFinetune, "FINETUNE"},
};

std::vector<std::vector<TokenId>> encode_words(const std::vector<std::string>& words, const SubwordTokenizer& tok) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(encode_word(tok, w));
  return out;
}

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

std::size_t total_length(const std::vector<std::vector<TokenId>>& words) {
  std::size_t n = 0;
  for (const auto& w : words) n += w.size();
  return n;
}

}  // namespace

std::string_view to_string(Objective objective) {
  for (const auto& [o, name] : kObjectiveNames) {
    if (o == objective) return name;
  }
  return "UNKNOWN";
}

Objective objective_from_string(std::string_view name) {
  for (const auto& [o, n] : kObjectiveNames) {
    if (n == name) return o;
  }
  throw FormatError("unknown objective '" + std::string(name) + "'");
}

nlohmann::json to_json(const TrainingInstance& inst) {
  nlohmann::json j{{"source_ids", inst.source_ids},
                   {"target_ids", inst.target_ids},
                   {"objective", std::string(to_string(inst.objective))}};
  if (inst.tag_labels) j["tag_labels"] = *inst.tag_labels;
  if (inst.control_code) j["control_code"] = *inst.control_code;
  return j;
}

TrainingInstance instance_from_json(const nlohmann::json& j) {
  TrainingInstance inst;
  try {
    inst.source_ids = j.at("source_ids").get<std::vector<TokenId>>();
    inst.target_ids = j.at("target_ids").get<std::vector<TokenId>>();
    inst.objective = objective_from_string(j.at("objective").get<std::string>());
    if (j.contains("tag_labels")) inst.tag_labels = j.at("tag_labels").get<std::vector<std::uint8_t>>();
    if (j.contains("control_code")) inst.control_code = j.at("control_code").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed instance: ") + e.what());
  }
  return inst;
}

std::vector<TrainingInstance> read_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open instance file: " + path.string());
  std::vector<TrainingInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_instances(const std::filesystem::path& path, const std::vector<TrainingInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write instance file: " + path.string());
  for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
}

SegmentRange pl_segment(const std::vector<TokenId>& source_ids) {
  const auto first = std::find(source_ids.begin(), source_ids.end(), kSepId);
  if (first == source_ids.end()) return {source_ids.size(), source_ids.size()};
  const auto last = std::find(source_ids.rbegin(), source_ids.rend(), kSepId).base() - 1;
  const auto begin = static_cast<std::size_t>(first - source_ids.begin()) + 1;
  const auto end = static_cast<std::size_t>(last - source_ids.begin());
  return {begin, std::max(begin, end)};
}

std::size_t SpanPlan::masked_words() const {
  std::size_t n = 0;
  for (const auto& s : spans) n += s.length;
  return n;
}

std::size_t mask_budget(std::size_t num_words, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("corruption rate must lie in [0, 1]");
  // The epsilon keeps exact halves (0.15 * 10) from rounding down through
  // binary representation error.
  const auto budget = static_cast<std::size_t>(std::floor(rate * static_cast<double>(num_words) + 0.5 + 1e-9));
  return std::min(budget, num_words);
}

SpanPlan sample_spans(std::size_t num_words, double rate, Rng& rng) {
  SpanPlan plan;
  plan.corruption_rate = rate;
  plan.seed = rng.next();
  const std::size_t budget = mask_budget(num_words, rate);
  if (budget == 0) return plan;
  Rng local(plan.seed);

  std::size_t count = static_cast<std::size_t>(std::floor(static_cast<double>(budget) / 3.0 + 0.5));
  count = std::clamp<std::size_t>(count, (budget + kMaxSpanLength - 1) / kMaxSpanLength, budget);

  std::vector<std::size_t> lengths(count);
  for (;;) {
    std::size_t sum = 0;
    for (auto& len : lengths) {
      len = static_cast<std::size_t>(local.uniform_int(kMinSpanLength, kMaxSpanLength));
      sum += len;
    }
    if (sum == budget) break;
  }

  // Distribute the unmasked words over count + 1 gaps (stars and bars).
  const std::size_t free_words = num_words - budget;
  const std::size_t min_gap = free_words >= count - 1 ? 1 : 0;
  const std::size_t slack = free_words - min_gap * (count - 1);
  const std::size_t slots = slack + count;
  std::set<std::size_t> bars;  // Floyd's sampling of `count` distinct slots
  for (std::size_t j = slots - count; j < slots; ++j) {
    const auto t = static_cast<std::size_t>(local.uniform_int(0, static_cast<std::int64_t>(j)));
    if (!bars.insert(t).second) bars.insert(j);
  }
  std::size_t pos = 0;
  std::size_t prev_bar = 0;
  std::size_t i = 0;
  for (auto bar : bars) {
    const std::size_t gap = (i == 0 ? bar : bar - prev_bar - 1) + (i == 0 ? 0 : min_gap);
    pos += gap;
    plan.spans.push_back({pos, lengths[i]});
    pos += lengths[i];
    prev_bar = bar;
    ++i;
  }
  return plan;
}

std::vector<TokenId> encode_word(const SubwordTokenizer& tok, std::string_view word) {
  std::string spaced;
  spaced.reserve(word.size() + 1);
  spaced += ' ';
  spaced += word;
  return tok.encode_ordinary(spaced);
}

CodeDocument fit_document(const CodeDocument& doc, const SubwordTokenizer& tok, const BuildOptions& options) {
  CodeDocument fitted = doc;
  std::size_t len = 3 + total_length(encode_words(doc.nl_tokens, tok)) + total_length(encode_words(doc.code_tokens, tok));
  while (len > options.max_source_len && !fitted.code_tokens.empty()) {
    len -= encode_word(tok, fitted.code_tokens.back()).size();
    fitted.code_tokens.pop_back();
    fitted.identifier_labels.pop_back();
  }
  while (len > options.max_source_len && !fitted.nl_tokens.empty()) {
    len -= encode_word(tok, fitted.nl_tokens.back()).size();
    fitted.nl_tokens.pop_back();
  }
  return fitted;
}

std::vector<TokenId> encode_document(const CodeDocument& doc, const SubwordTokenizer& tok) {
  std::vector<TokenId> ids{kClsId};
  for (const auto& w : doc.nl_tokens) append(ids, encode_word(tok, w));
  ids.push_back(kSepId);
  for (const auto& w : doc.code_tokens) append(ids, encode_word(tok, w));
  ids.push_back(kSepId);
  return ids;
}

TrainingInstance build_msp(const CodeDocument& doc, const SubwordTokenizer& tok, const SpanPlan& plan,
                           const BuildOptions& options) {
  const std::size_t n = doc.nl_tokens.size();
  auto words = encode_words(doc.nl_tokens, tok);
  for (const auto& w : doc.code_tokens) words.push_back(encode_word(tok, w));
  const std::size_t num_words = words.size();

  if (plan.spans.size() > static_cast<std::size_t>(kNumSentinels)) {
    throw SentinelExhausted("span plan has " + std::to_string(plan.spans.size()) + " spans; at most " +
                            std::to_string(kNumSentinels) + " sentinels exist");
  }
  std::size_t prev_end = 0;
  for (const auto& s : plan.spans) {
    if (s.length == 0 || s.start < prev_end || s.start + s.length > num_words) {
      throw InvalidArgument("span plan does not fit a document of " + std::to_string(num_words) + " words");
    }
    prev_end = s.start + s.length;
  }

  auto build = [&](std::size_t active) {
    TrainingInstance inst;
    inst.objective = Objective::kMsp;
    inst.source_ids.push_back(kClsId);
    std::size_t si = 0;
    auto in_span = [&](std::size_t p) {
      return si < active && p >= plan.spans[si].start && p < plan.spans[si].start + plan.spans[si].length;
    };
    for (std::size_t p = 0; p < num_words; ++p) {
      while (si < active && p >= plan.spans[si].start + plan.spans[si].length) ++si;
      const bool masked = in_span(p);
      if (p == n) {
        // The NL/PL delimiter travels with a span that straddles it.
        const bool straddles = masked && plan.spans[si].start < p;
        (straddles ? inst.target_ids : inst.source_ids).push_back(kSepId);
      }
      if (masked && p == plan.spans[si].start) {
        const TokenId sentinel = SubwordTokenizer::sentinel_id(static_cast<int>(si));
        inst.source_ids.push_back(sentinel);
        inst.target_ids.push_back(sentinel);
      }
      append(masked ? inst.target_ids : inst.source_ids, words[p]);
    }
    if (n == num_words) inst.source_ids.push_back(kSepId);
    inst.source_ids.push_back(kSepId);
    return inst;
  };

  std::size_t active = plan.spans.size();
  auto inst = build(active);
  while (inst.target_ids.size() > options.max_target_len && active > 0) inst = build(--active);
  return inst;
}

TrainingInstance build_it(const CodeDocument& doc, const SubwordTokenizer& tok) {
  doc.validate();
  TrainingInstance inst;
  inst.objective = Objective::kIt;
  inst.source_ids = {kClsId};
  for (const auto& w : doc.nl_tokens) append(inst.source_ids, encode_word(tok, w));
  inst.source_ids.push_back(kSepId);
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < doc.code_tokens.size(); ++i) {
    const auto pieces = encode_word(tok, doc.code_tokens[i]);
    append(inst.source_ids, pieces);
    labels.insert(labels.end(), pieces.size(), doc.identifier_labels[i]);
  }
  inst.source_ids.push_back(kSepId);
  inst.tag_labels = std::move(labels);
  return inst;
}

std::optional<TrainingInstance> build_mip(const CodeDocument& doc, const SubwordTokenizer& tok,
                                          const BuildOptions& options) {
  doc.validate();
  std::size_t code_words = doc.code_tokens.size();
  for (;;) {
    std::unordered_map<std::string, int> sentinel_of;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < code_words; ++i) {
      if (doc.identifier_labels[i] && sentinel_of.emplace(doc.code_tokens[i], static_cast<int>(order.size())).second) {
        order.push_back(doc.code_tokens[i]);
      }
    }
    if (order.empty()) return std::nullopt;
    if (order.size() > static_cast<std::size_t>(kNumSentinels)) {
      throw SentinelExhausted(std::to_string(order.size()) + " distinct identifiers exceed " +
                              std::to_string(kNumSentinels) + " sentinels");
    }
    TrainingInstance inst;
    inst.objective = Objective::kMip;
    inst.source_ids = {kClsId};
    for (const auto& w : doc.nl_tokens) append(inst.source_ids, encode_word(tok, w));
    inst.source_ids.push_back(kSepId);
    for (std::size_t i = 0; i < code_words; ++i) {
      if (doc.identifier_labels[i]) {
        inst.source_ids.push_back(SubwordTokenizer::sentinel_id(sentinel_of.at(doc.code_tokens[i])));
      } else {
        append(inst.source_ids, encode_word(tok, doc.code_tokens[i]));
      }
    }
    inst.source_ids.push_back(kSepId);
    for (std::size_t j = 0; j < order.size(); ++j) {
      inst.target_ids.push_back(SubwordTokenizer::sentinel_id(static_cast<int>(j)));
      append(inst.target_ids, encode_word(tok, order[j]));
    }
    if ((inst.target_ids.size() <= options.max_target_len && inst.source_ids.size() <= options.max_source_len) ||
        code_words == 0) {
      return inst;
    }
    --code_words;
  }
}

std::pair<TrainingInstance, TrainingInstance> build_dual_pair(const CodeDocument& doc, const SubwordTokenizer& tok,
                                                              const BuildOptions& options) {
  if (!doc.bimodal()) throw InvalidArgument("dual generation needs a bimodal document");
  const TokenId nl_tag = tok.special_id(language_tag("en"));
  const TokenId pl_tag = tok.special_id(language_tag(doc.language));

  auto segment = [&](TokenId tag, const std::vector<std::string>& words) {
    std::vector<TokenId> src{kClsId, tag};
    for (const auto& w : words) {
      auto pieces = encode_word(tok, w);
      if (src.size() + pieces.size() + 1 > options.max_source_len) break;
      append(src, pieces);
    }
    src.push_back(kSepId);
    return src;
  };
  auto target = [&](const std::vector<std::string>& words) {
    std::vector<TokenId> tgt;
    for (const auto& w : words) {
      auto pieces = encode_word(tok, w);
      if (tgt.size() + pieces.size() > options.max_target_len) break;
      append(tgt, pieces);
    }
    return tgt;
  };

  TrainingInstance nl2pl{segment(nl_tag, doc.nl_tokens), target(doc.code_tokens), Objective::kDualNl2Pl, {}, {}};
  TrainingInstance pl2nl{segment(pl_tag, doc.code_tokens), target(doc.nl_tokens), Objective::kDualPl2Nl, {}, {}};
  return {std::move(nl2pl), std::move(pl2nl)};
}

Objective pick_denoising_task(Rng& rng) { return kDenoisingTasks[rng.uniform_int(0, 2)]; }

std::vector<TrainingInstance> build_denoise_instances(const std::vector<CodeDocument>& docs,
                                                      const SubwordTokenizer& tok, std::uint64_t seed, double rate,
                                                      const BuildOptions& options) {
  std::vector<TrainingInstance> out;
  out.reserve(docs.size() * 3);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto doc = fit_document(docs[i], tok, options);
    Rng rng(mix_seed(seed, i));
    const auto plan = sample_spans(doc.nl_tokens.size() + doc.code_tokens.size(), rate, rng);
    out.push_back(build_msp(doc, tok, plan, options));
    out.push_back(build_it(doc, tok));
    if (auto mip = build_mip(doc, tok, options)) out.push_back(std::move(*mip));
  }
  return out;
}

std::vector<TrainingInstance> build_dual_instances(const std::vector<CodeDocument>& docs,
                                                   const SubwordTokenizer& tok, const BuildOptions& options) {
  std::vector<TrainingInstance> out;
  for (const auto& doc : docs) {
    if (!doc.bimodal()) continue;
    auto [a, b] = build_dual_pair(doc, tok, options);
    out.push_back(std::move(a));
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace idpt
