#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idpt/bpe.hpp"
#include "idpt/corpus.hpp"
#include "idpt/error.hpp"
#include "idpt/lexer.hpp"
#include "idpt/metrics.hpp"
#include "idpt/model/checkpoint.hpp"
#include "idpt/model/protocol.hpp"
#include "idpt/model/train.hpp"
#include "idpt/objectives.hpp"
#include "idpt/sampler.hpp"
#include "json.hpp"
#include "stage_store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace idpt;
using namespace idpt::cli;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kInvalid = 3, kIo = 4, kFormat = 5, kUnsupported = 6 };

// Stage directories may be passed where a file inside them is expected.
fs::path inside(const fs::path& p, const char* file) { return fs::is_directory(p) ? p / file : p; }

json input_entry(const fs::path& p) { return {{"path", fs::absolute(p).lexically_normal().string()}, {"sha256", file_sha256(p)}}; }

json tokenizer_entry(const fs::path& dir) {
  return {{"path", fs::absolute(dir).lexically_normal().string()},
          {"sha256", sha256_hex(file_sha256(dir / "vocab.txt") + file_sha256(dir / "merges.txt"))}};
}

// Digest of every rule table in the languages directory, in name order.
std::string rules_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + ":" + file_sha256(f) + "\n";
  return sha256_hex(all);
}

void report(const StageResult& r, const std::string& stage) {
  std::cerr << stage << (r.cached ? ": reusing " : ": wrote ") << r.dir.string() << '\n';
  std::cout << r.dir.string() << '\n';
}

// Copies a stage artifact to a user-chosen location; the run directory stays
// the source of truth.
void export_to(const fs::path& artifact, const std::string& out) {
  if (out.empty()) return;
  const fs::path dest(out);
  if (fs::is_directory(artifact)) {
    fs::create_directories(dest);
    for (const auto& e : fs::directory_iterator(artifact)) {
      if (e.is_regular_file()) fs::copy_file(e.path(), dest / e.path().filename(), fs::copy_options::overwrite_existing);
    }
  } else {
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    fs::copy_file(artifact, dest, fs::copy_options::overwrite_existing);
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

// Records of a line-delimited corpus or an already normalized document file.
std::vector<CodeDocument> load_documents(const fs::path& path, const LanguageRegistry& registry, bool normalized) {
  if (normalized) return read_documents(path);
  const auto ingested = ingest_all(path);
  for (const auto& e : ingested.errors) std::cerr << path.string() << ":" << e.line << ": " << e.message << '\n';
  std::vector<std::string> warnings;
  auto docs = normalize_all(ingested.records, registry, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return docs;
}

struct Common {
  std::string run_root = default_run_root().string();
  std::string languages_dir = std::string(IDPT_DATA_DIR) + "/languages";
};

struct ModelFlags {
  std::size_t d_model = 128, heads = 4, encoder_layers = 2, decoder_layers = 2, ff = 512, max_src = 512, max_tgt = 256;
  double dropout = 0.1;

  void add(CLI::App* app) {
    app->add_option("--d-model", d_model, "Hidden size")->capture_default_str();
    app->add_option("--heads", heads, "Attention heads")->capture_default_str();
    app->add_option("--encoder-layers", encoder_layers)->capture_default_str();
    app->add_option("--decoder-layers", decoder_layers)->capture_default_str();
    app->add_option("--ff", ff, "Feed-forward width")->capture_default_str();
    app->add_option("--max-src", max_src, "Encoder length limit")->capture_default_str();
    app->add_option("--max-tgt", max_tgt, "Decoder length limit")->capture_default_str();
    app->add_option("--dropout", dropout)->capture_default_str();
  }
  ModelConfig config(std::size_t vocab) const {
    ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = d_model;
    c.num_heads = heads;
    c.encoder_layers = encoder_layers;
    c.decoder_layers = decoder_layers;
    c.feedforward_dim = ff;
    c.max_src_len = max_src;
    c.max_tgt_len = max_tgt;
    c.dropout = dropout;
    c.validate();
    return c;
  }
};

struct OptimizerFlags {
  double lr = 2e-4;
  std::size_t warmup = 0;
  double clip = 1.0;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "Peak learning rate")->capture_default_str();
    app->add_option("--warmup", warmup, "Linear warmup steps")->capture_default_str();
    app->add_option("--clip", clip, "Gradient-norm clip, <= 0 disables")->capture_default_str();
  }
  OptimizerOptions options() const {
    OptimizerOptions o;
    o.peak_lr = lr;
    o.warmup_steps = warmup;
    o.clip_norm = clip;
    return o;
  }
  json to_json() const { return {{"lr", lr}, {"warmup", warmup}, {"clip", clip}}; }
};

// ---------------------------------------------------------------- ingest

struct IngestCmd {
  std::string input;
  std::vector<std::string> languages;
  std::string out;

  void add(CLI::App* app, Common& common) {
    app->add_option("--input", input, "Line-delimited corpus: {code, docstring?, language}")->required()->check(CLI::ExistingFile);
    app->add_option("--languages", languages, "Keep only these language tags");
    app->add_option("--lang-config", common.languages_dir, "Lexer rule table or directory of them");
    app->add_option("--out", out, "Also copy the documents file here");
  }
  int run(const Common& common) {
    const auto registry = LanguageRegistry::load(common.languages_dir);
    std::set<std::string> keep(languages.begin(), languages.end());
    std::sort(languages.begin(), languages.end());
    const json resolved{{"stage", "ingest"},
                        {"inputs", {{"input", input_entry(input)}}},
                        {"rules", rules_digest(common.languages_dir)},
                        {"params", {{"languages", languages}}}};
    const auto r = run_stage(common.run_root, "ingest", resolved, [&](const fs::path& dir) {
      const auto ingested = ingest_all(input, keep);
      std::vector<std::string> warnings;
      const auto docs = normalize_all(ingested.records, registry, &warnings);
      write_documents(dir / "documents.jsonl", docs);
      json errors = json::array();
      for (const auto& e : ingested.errors) errors.push_back({{"line", e.line}, {"message", e.message}});
      std::ofstream(dir / "report.json") << json{{"records", ingested.records.size()},
                                                 {"documents", docs.size()},
                                                 {"malformed", errors},
                                                 {"dropped", warnings}}
                                                .dump(2)
                                         << '\n';
      std::cerr << "ingest: " << docs.size() << " documents, " << ingested.errors.size() << " malformed lines, "
                << warnings.size() << " dropped\n";
    });
    report(r, "ingest");
    export_to(r.dir / "documents.jsonl", out);
    return kOk;
  }
};

// ---------------------------------------------------------------- stats

struct StatsCmd {
  std::string input;
  bool normalized = false;
  bool as_json = false;

  void add(CLI::App* app, Common& common) {
    app->add_option("--input", input, "Raw corpus, or a documents file / ingest directory with --normalized")
        ->required();
    app->add_option("--lang-config", common.languages_dir, "Lexer rule table or directory of them");
    app->add_flag("--normalized", normalized, "Input holds normalized documents");
    app->add_flag("--json", as_json, "Print JSON instead of a table");
  }
  int run(const Common& common) {
    const auto registry = LanguageRegistry::load(common.languages_dir);
    const auto stats = compute_stats(load_documents(inside(input, "documents.jsonl"), registry, normalized));
    if (as_json) {
      std::cout << to_json(stats).dump(2) << '\n';
      return kOk;
    }
    std::printf("%-12s %8s %8s %12s %12s %10s\n", "language", "with_nl", "no_nl", "identifiers", "tokens", "id_rate");
    LanguageStats total;
    for (const auto& [lang, s] : stats) {
      std::printf("%-12s %8zu %8zu %12zu %12zu %10.4f\n", lang.c_str(), s.with_nl, s.without_nl, s.identifier_tokens,
                  s.code_tokens, s.identifier_rate());
      total.with_nl += s.with_nl;
      total.without_nl += s.without_nl;
      total.identifier_tokens += s.identifier_tokens;
      total.code_tokens += s.code_tokens;
    }
    std::printf("%-12s %8zu %8zu %12zu %12zu %10.4f\n", "all", total.with_nl, total.without_nl,
                total.identifier_tokens, total.code_tokens, total.identifier_rate());
    return kOk;
  }
};

// ---------------------------------------------------------------- lex

struct LexCmd {
  std::string language;
  std::string file;
  bool keep_comments = false;
  bool as_json = false;

  void add(CLI::App* app, Common& common) {
    app->add_option("--lang,--language", language, "Language tag")->required();
    app->add_option("--input,--file", file, "Source file (default: stdin)")->check(CLI::ExistingFile);
    app->add_option("--lang-config", common.languages_dir, "Lexer rule table or directory of them");
    app->add_flag("--keep-comments", keep_comments);
    app->add_flag("--json", as_json, "One JSON object per token");
  }
  int run(const Common& common) {
    const auto registry = LanguageRegistry::load(common.languages_dir);
    const auto& lexer = registry.get(language);
    std::stringstream buf;
    if (file.empty()) {
      buf << std::cin.rdbuf();
    } else {
      std::ifstream in(file, std::ios::binary);
      buf << in.rdbuf();
    }
    const auto tokens = lexer.lex(buf.str(), LexOptions{keep_comments});
    const auto labels = label_identifiers(tokens);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      if (as_json) {
        std::cout << json{{"text", t.text},
                          {"kind", to_string(t.kind)},
                          {"identifier", labels[i] == 1},
                          {"begin", t.span.begin},
                          {"end", t.span.end}}
                         .dump()
                  << '\n';
      } else {
        std::cout << static_cast<int>(labels[i]) << '\t' << to_string(t.kind) << '\t' << t.text << '\n';
      }
    }
    return kOk;
  }
};

// ---------------------------------------------------------------- train-tokenizer

struct TrainTokenizerCmd {
  std::string input;
  std::vector<std::string> text;
  std::size_t vocab_size = 8000;
  std::size_t min_freq = 3;
  std::string out;

  void add(CLI::App* app, Common&) {
    app->add_option("--out", out, "Also copy the tokenizer files into this directory");
    app->add_option("--input", input, "Raw corpus; code and docstrings are both used")->required()->check(CLI::ExistingFile);
    app->add_option("--text", text, "Extra plain-text files, one document per line")->check(CLI::ExistingFile);
    app->add_option("--vocab-size", vocab_size)->capture_default_str();
    app->add_option("--min-freq", min_freq)->capture_default_str();
  }
  int run(const Common& common) {
    json extra = json::array();
    for (const auto& t : text) extra.push_back(input_entry(t));
    const json resolved{{"stage", "train-tokenizer"},
                        {"inputs", {{"input", input_entry(input)}, {"text", extra}}},
                        {"params", {{"vocab-size", vocab_size}, {"min-freq", min_freq}}}};
    const auto r = run_stage(common.run_root, "train-tokenizer", resolved, [&](const fs::path& dir) {
      std::vector<std::string> corpus;
      for (const auto& rec : ingest_all(input).records) {
        corpus.push_back(rec.code);
        if (rec.docstring) corpus.push_back(*rec.docstring);
      }
      for (const auto& t : text) {
        for (auto& line : read_lines(t)) {
          if (!line.empty()) corpus.push_back(std::move(line));
        }
      }
      BpeTrainOptions opts;
      opts.vocab_size = vocab_size;
      opts.min_freq = min_freq;
      const auto tok = SubwordTokenizer::train(corpus, opts);
      tok.save(dir);
      std::cerr << "train-tokenizer: " << tok.vocab_size() << " units, " << tok.merges().size() << " merges\n";
    });
    report(r, "train-tokenizer");
    if (!out.empty()) {
      fs::create_directories(out);
      for (const char* f : {"vocab.txt", "merges.txt"}) export_to(r.dir / f, (fs::path(out) / f).string());
    }
    return kOk;
  }
};

// ---------------------------------------------------------------- build-instances

struct BuildInstancesCmd {
  std::string documents;
  std::string tokenizer;
  std::string phase = "denoise";
  double rate = kDefaultCorruptionRate;
  std::uint64_t seed = 0;
  std::size_t max_src = 512, max_tgt = 256;
  std::string out;

  void add(CLI::App* app, Common&) {
    app->add_option("--out", out, "Also copy the instances file here");
    app->add_option("--documents", documents, "Documents file or ingest directory")->required();
    app->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required()->check(CLI::ExistingDirectory);
    app->add_option("--phase", phase, "denoise or dual")->capture_default_str();
    app->add_option("--rate", rate, "Span corruption rate")->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--max-src", max_src)->capture_default_str();
    app->add_option("--max-tgt", max_tgt)->capture_default_str();
  }
  int run(const Common& common) {
    const auto docs_path = inside(documents, "documents.jsonl");
    const auto p = pretrain_phase_from_string(phase);
    const json resolved{{"stage", "build-instances"},
                        {"inputs", {{"documents", input_entry(docs_path)}, {"tokenizer", tokenizer_entry(tokenizer)}}},
                        {"params",
                         {{"phase", phase}, {"rate", rate}, {"seed", seed}, {"max-src", max_src}, {"max-tgt", max_tgt}}}};
    const auto r = run_stage(common.run_root, "build-instances", resolved, [&](const fs::path& dir) {
      const auto tok = SubwordTokenizer::load(tokenizer);
      const BuildOptions opts{max_src, max_tgt};
      std::vector<CodeDocument> docs;
      for (const auto& d : read_documents(docs_path)) docs.push_back(fit_document(d, tok, opts));
      const auto instances = p == PretrainPhase::kDenoise ? build_denoise_instances(docs, tok, seed, rate, opts)
                                                          : build_dual_instances(docs, tok, opts);
      write_instances(dir / "instances.jsonl", instances);
      std::map<std::string, std::size_t> counts;
      for (const auto& inst : instances) ++counts[std::string(to_string(inst.objective))];
      std::ofstream(dir / "summary.json") << json(counts).dump(2) << '\n';
      std::cerr << "build-instances: " << instances.size() << " instances from " << docs.size() << " documents\n";
    });
    report(r, "build-instances");
    export_to(r.dir / "instances.jsonl", out);
    return kOk;
  }
};

// ---------------------------------------------------------------- pretrain

struct PretrainCmd {
  std::string instances;
  std::string tokenizer;
  std::string init;
  std::string phase = "denoise";
  std::vector<std::string> objectives;
  std::size_t steps = 100, batch_size = 8;
  std::uint64_t seed = 0;
  ModelFlags model;
  OptimizerFlags optimizer;
  std::string out;

  void add(CLI::App* app, Common&) {
    app->add_option("--out", out, "Also copy the checkpoint here");
    app->add_option("--instances", instances, "Instances file or build-instances directory")->required();
    app->add_option("--tokenizer", tokenizer, "Tokenizer directory (sets the vocabulary size)")
        ->check(CLI::ExistingDirectory);
    app->add_option("--init", init, "Start from this checkpoint (file or stage directory)");
    app->add_option("--phase", phase, "denoise or dual")->capture_default_str();
    app->add_option("--objectives", objectives, "Denoising objectives to draw from (MSP, IT, MIP)");
    app->add_option("--steps", steps)->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    model.add(app);
    optimizer.add(app);
  }
  int run(const Common& common) {
    if (init.empty() && tokenizer.empty()) throw InvalidArgument("pretrain needs --tokenizer or --init");
    const auto inst_path = inside(instances, "instances.jsonl");
    const fs::path init_path = init.empty() ? fs::path{} : inside(init, "model.ckpt");
    PretrainSchedule schedule;
    schedule.phase = pretrain_phase_from_string(phase);
    schedule.steps = steps;
    schedule.batch_size = batch_size;
    schedule.seed = seed;
    schedule.optimizer = optimizer.options();
    for (const auto& o : objectives) schedule.objectives.push_back(objective_from_string(o));

    ModelConfig config;
    json inputs{{"instances", input_entry(inst_path)}};
    if (!init.empty()) {
      inputs["init"] = input_entry(init_path);
      config = read_checkpoint_config(init_path);
    } else {
      inputs["tokenizer"] = tokenizer_entry(tokenizer);
      config = model.config(SubwordTokenizer::load(tokenizer).vocab_size());
    }
    const json resolved{{"stage", "pretrain"},
                        {"inputs", inputs},
                        {"model", to_json(config)},
                        {"params",
                         {{"phase", phase},
                          {"objectives", objectives},
                          {"steps", steps},
                          {"batch-size", batch_size},
                          {"seed", seed},
                          {"optimizer", optimizer.to_json()}}}};
    const auto r = run_stage(common.run_root, "pretrain", resolved, [&](const fs::path& dir) {
      const auto data = read_instances(inst_path);
      auto net = init.empty() ? Seq2SeqModel<float>(config, mix_seed(seed, 0x1417)) : load_checkpoint<float>(init_path);
      std::ofstream log(dir / "metrics.jsonl");
      const auto records = pretrain(net, data, schedule, [&](const MetricRecord& rec) {
        log << to_json(rec).dump() << '\n';
        if ((rec.step + 1) % 25 == 0 || rec.step == 0) {
          std::cerr << "step " << rec.step << " " << rec.objective << " loss " << rec.loss << '\n';
        }
      });
      save_checkpoint(net, dir / "model.ckpt");
      std::cerr << "pretrain: " << records.size() << " steps on " << data.size() << " instances\n";
    });
    report(r, "pretrain");
    export_to(r.dir / "model.ckpt", out);
    return kOk;
  }
};

// ---------------------------------------------------------------- finetune

// Task data lines are {"source": text, "target": text}.
std::vector<TrainingInstance> load_pairs(const fs::path& path, const SubwordTokenizer& tok, const ModelConfig& config,
                                         const std::string& control_code) {
  std::vector<TrainingInstance> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("source") || !j.contains("target")) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected source and target");
    }
    TrainingInstance inst;
    inst.objective = Objective::kFinetune;
    auto src = tok.encode(j["source"].get<std::string>());
    auto tgt = tok.encode(j["target"].get<std::string>());
    const std::size_t code_room = control_code.empty() ? 0 : tok.encode(control_code).size();
    if (src.size() + 2 + code_room > config.max_src_len) src.resize(config.max_src_len - 2 - std::min(code_room, config.max_src_len - 2));
    if (tgt.size() > config.max_tgt_len) tgt.resize(config.max_tgt_len);
    inst.source_ids.push_back(kClsId);
    inst.source_ids.insert(inst.source_ids.end(), src.begin(), src.end());
    inst.source_ids.push_back(kSepId);
    inst.target_ids = std::move(tgt);
    out.push_back(apply_control_code(std::move(inst), control_code, tok));
  }
  return out;
}

struct FinetuneCmd {
  std::string init;
  std::string tokenizer;
  std::string mixture;
  std::string task;
  bool multi_task = false;
  std::optional<double> alpha;
  std::size_t steps = 100, batch_size = 8, eval_every = 25;
  std::uint64_t seed = 0;
  OptimizerFlags optimizer;
  std::string out;

  void add(CLI::App* app, Common&) {
    app->add_option("--out", out, "Also copy the final checkpoint here");
    app->add_option("--init", init, "Pre-trained checkpoint (file or stage directory)")->required();
    app->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required()->check(CLI::ExistingDirectory);
    app->add_option("--mixture", mixture, "Mixture config JSON")->required()->check(CLI::ExistingFile);
    app->add_option("--task", task, "Train this task alone");
    app->add_flag("--multi-task", multi_task, "Train every task of the mixture jointly");
    app->add_option("--alpha", alpha, "Override the mixture exponent");
    app->add_option("--steps", steps)->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--eval-every", eval_every)->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    optimizer.add(app);
  }
  int run(const Common& common) {
    if (multi_task == !task.empty()) throw InvalidArgument("finetune needs exactly one of --multi-task or --task");
    const auto init_path = inside(init, "model.ckpt");
    auto count_lines = [](const fs::path& p) {
      std::size_t n = 0;
      for (const auto& line : read_lines(p)) n += !line.empty();
      return n;
    };
    auto mix = TaskMixture::load(mixture, alpha, count_lines);
    if (!multi_task) {
      std::vector<TaskSpec> one{mix.task(task)};
      mix = TaskMixture(one, mix.alpha());
    }
    json tasks = json::array();
    for (std::size_t i = 0; i < mix.tasks().size(); ++i) {
      const auto& t = mix.tasks()[i];
      if (t.dataset.empty()) throw InvalidArgument("task '" + t.name + "' has no dataset");
      json entry{{"name", t.name}, {"control_code", t.control_code}, {"size", t.size}, {"prob", mix.probs()[i]},
                 {"dataset", input_entry(t.dataset)}};
      if (!t.validation.empty()) entry["validation"] = input_entry(t.validation);
      tasks.push_back(entry);
    }
    const json resolved{{"stage", "finetune"},
                        {"inputs",
                         {{"init", input_entry(init_path)},
                          {"tokenizer", tokenizer_entry(tokenizer)},
                          {"mixture", input_entry(mixture)}}},
                        {"tasks", tasks},
                        {"params",
                         {{"task", task},
                          {"multi-task", multi_task},
                          {"alpha", mix.alpha()},
                          {"steps", steps},
                          {"batch-size", batch_size},
                          {"eval-every", eval_every},
                          {"seed", seed},
                          {"optimizer", optimizer.to_json()}}}};
    const auto r = run_stage(common.run_root, "finetune", resolved, [&](const fs::path& dir) {
      const auto tok = SubwordTokenizer::load(tokenizer);
      auto net = load_checkpoint<float>(init_path);
      std::map<std::string, FinetuneData> data;
      for (const auto& t : mix.tasks()) {
        auto& d = data[t.name];
        d.train = load_pairs(t.dataset, tok, net.config(), t.control_code);
        if (!t.validation.empty()) d.validation = load_pairs(t.validation, tok, net.config(), t.control_code);
      }
      FinetuneOptions opts;
      opts.steps = steps;
      opts.batch_size = batch_size;
      opts.eval_every = eval_every;
      opts.seed = seed;
      opts.optimizer = optimizer.options();
      std::ofstream log(dir / "metrics.jsonl");
      const auto result = finetune(net, mix, data, opts, [&](const MetricRecord& rec) { log << to_json(rec).dump() << '\n'; });
      save_checkpoint(net, dir / "model.ckpt");
      for (const auto& [name, params] : result.best_parameters) {
        Seq2SeqModel<float> best = net;
        best.parameters() = params;
        save_checkpoint(best, dir / ("best-" + name + ".ckpt"));
      }
      std::ofstream(dir / "summary.json") << json{{"best_validation", result.best_validation}}.dump(2) << '\n';
      std::cerr << "finetune: " << steps << " steps over " << mix.tasks().size() << " task(s)\n";
    });
    report(r, "finetune");
    export_to(r.dir / "model.ckpt", out);
    return kOk;
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  std::string task;
  std::string hyp, ref;
  std::string model, instances;
  std::vector<std::string> metrics;
  std::size_t max_len = 64;

  void add(CLI::App* app, Common&) {
    app->add_option("--task", task, "Task name; selects the default metrics")->required();
    app->add_option("--hyp", hyp, "Hypotheses, one per line")->check(CLI::ExistingFile);
    app->add_option("--ref", ref, "References, one per line")->check(CLI::ExistingFile);
    app->add_option("--model", model, "Checkpoint to decode sentinel instances with (file or stage directory)");
    app->add_option("--instances", instances, "MSP or MIP instances for --model");
    app->add_option("--metric", metrics, "bleu, em, accuracy or f1 (default depends on the task)");
    app->add_option("--max-len", max_len, "Decoding limit for --model")->capture_default_str();
  }

  static std::vector<std::string> default_metrics(const std::string& task) {
    if (task == "summarize" || task == "summarization") return {"bleu"};
    if (task == "defect") return {"accuracy"};
    if (task == "clone") return {"f1"};
    return {"bleu", "em"};
  }
  static bool reports_codebleu(const std::string& task) {
    return task == "concode" || task == "generate" || task == "translate" || task == "refine";
  }

  int run(const Common&) {
    if (!model.empty() || !instances.empty()) return run_model();
    if (hyp.empty() || ref.empty()) throw InvalidArgument("eval needs --hyp and --ref, or --model and --instances");
    const auto hyps = read_lines(hyp), refs = read_lines(ref);
    if (hyps.size() != refs.size()) {
      throw InvalidArgument("hypothesis and reference files differ in length (" + std::to_string(hyps.size()) + " vs " +
                            std::to_string(refs.size()) + ")");
    }
    if (reports_codebleu(task)) std::cerr << "note: CodeBLEU is not computed; reporting BLEU and EM instead\n";
    for (const auto& m : metrics.empty() ? default_metrics(task) : metrics) {
      EvalReport rep;
      rep.metric = m;
      if (m == "bleu") {
        double sum = 0.0;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          rep.per_example.push_back(smoothed_bleu4(whitespace_tokens(hyps[i]), whitespace_tokens(refs[i])));
          sum += rep.per_example.back();
        }
        rep.value = hyps.empty() ? 0.0 : sum / static_cast<double>(hyps.size());
      } else if (m == "em") {
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          rep.per_example.push_back(whitespace_tokens(hyps[i]) == whitespace_tokens(refs[i]) ? 1.0 : 0.0);
        }
        rep.value = exact_match(hyps, refs);
      } else if (m == "accuracy" || m == "f1") {
        std::vector<int> p, g;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          p.push_back(parse_label(hyps[i], hyp, i));
          g.push_back(parse_label(refs[i], ref, i));
          rep.per_example.push_back(p.back() == g.back() ? 1.0 : 0.0);
        }
        rep.value = m == "accuracy" ? accuracy(p, g) : f1_binary(p, g);
      } else {
        throw InvalidArgument("unknown metric '" + m + "'");
      }
      std::cout << to_json(rep).dump() << '\n';
    }
    return kOk;
  }

  static int parse_label(const std::string& text, const std::string& file, std::size_t line) {
    const auto words = whitespace_tokens(text);
    try {
      if (words.size() == 1) return std::stoi(words[0]);
    } catch (const std::exception&) {
    }
    throw FormatError(file + ":" + std::to_string(line + 1) + ": expected an integer label");
  }

  int run_model() {
    if (model.empty() || instances.empty()) throw InvalidArgument("--model and --instances go together");
    const auto net = load_checkpoint<float>(inside(model, "model.ckpt"));
    std::vector<TrainingInstance> sentinel;
    for (auto& inst : read_instances(inside(instances, "instances.jsonl"))) {
      if (inst.objective == Objective::kMsp || inst.objective == Objective::kMip) sentinel.push_back(std::move(inst));
    }
    for (const char* kind : {"MSP", "MIP"}) {
      std::vector<TrainingInstance> subset;
      for (const auto& inst : sentinel) {
        if (to_string(inst.objective) == kind) subset.push_back(inst);
      }
      if (subset.empty()) continue;
      const auto s = evaluate_sentinel_task(net, subset, max_len);
      std::cout << to_json(EvalReport{std::string(kind) + "/accuracy", s.accuracy, {}}).dump() << '\n';
      std::cout << to_json(EvalReport{std::string(kind) + "/pred_count_match", s.pred_count_match, {}}).dump() << '\n';
    }
    return kOk;
  }
};

// A --config snapshot replays a stage: its params become leading arguments
// that anything given on the command line overrides.
std::vector<std::string> snapshot_args(const fs::path& path, const std::string& stage) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json snap;
  try {
    in >> snap;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (snap.value("stage", "") != stage) {
    throw InvalidArgument(path.string() + " is a snapshot of '" + snap.value("stage", "?") + "', not '" + stage + "'");
  }
  std::vector<std::string> args;
  auto push = [&](const std::string& key, const json& v) {
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back("--" + key);
    } else if (v.is_array()) {
      if (v.empty()) return;
      args.push_back("--" + key);
      for (const auto& x : v) args.push_back(x.is_string() ? x.get<std::string>() : x.dump());
    } else if (!v.is_null() && !(v.is_string() && v.get<std::string>().empty())) {
      args.push_back("--" + key);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  };
  const json params = snap.value("params", json::object());
  const json inputs = snap.value("inputs", json::object());
  for (const auto& [key, v] : params.items()) {
    if (key == "optimizer") {
      for (const auto& [k, x] : v.items()) push(k, x);
    } else {
      push(key, v);
    }
  }
  for (const auto& [key, v] : inputs.items()) {
    if (v.is_object()) {
      push(key, v.at("path"));
    } else if (v.is_array()) {
      json paths = json::array();
      for (const auto& x : v) paths.push_back(x.at("path"));
      push(key, paths);
    }
  }
  if (stage == "pretrain" && snap.contains("model") && !inputs.contains("init")) {
    const auto& m = snap["model"];
    push("d-model", m.at("d_model"));
    push("heads", m.at("num_heads"));
    push("encoder-layers", m.at("encoder_layers"));
    push("decoder-layers", m.at("decoder_layers"));
    push("ff", m.at("feedforward_dim"));
    push("max-src", m.at("max_src_len"));
    push("max-tgt", m.at("max_tgt_len"));
    push("dropout", m.at("dropout"));
  }
  return args;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  CLI::App app{"Identifier-aware code pre-training pipeline", "idpt"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Common common;
  app.add_option("--run-root", common.run_root, "Run-directory root (env IDPT_RUN_ROOT, default ./runs)");
  app.add_option("--languages-dir", common.languages_dir, "Directory of lexer rule tables")->capture_default_str();
  std::string config_path;
  app.add_option("--config", config_path, "Replay a stage from its config.json snapshot");

  IngestCmd ingest;
  StatsCmd stats;
  LexCmd lex;
  TrainTokenizerCmd train_tok;
  BuildInstancesCmd build;
  PretrainCmd pre;
  FinetuneCmd fine;
  EvalCmd eval;
  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  auto sub = [&](const char* name, const char* help, auto& cmd) {
    auto* s = app.add_subcommand(name, help);
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    cmd.add(s, common);
    commands.emplace_back(s, [&cmd, &common] { return cmd.run(common); });
  };
  sub("ingest", "Read a raw corpus and write normalized documents", ingest);
  sub("stats", "Per-language identifier statistics", stats);
  sub("lex", "Print the lexical tokens of one source file", lex);
  sub("train-tokenizer", "Train the subword tokenizer", train_tok);
  sub("build-instances", "Build pre-training instances", build);
  sub("pretrain", "Pre-train a model", pre);
  sub("finetune", "Fine-tune on one task or a task mixture", fine);
  sub("eval", "Score outputs, or decode sentinel instances with a model", eval);

  if (args.empty()) {
    std::cerr << app.help();
    return kUsage;
  }
  // Splice snapshot arguments in right after the subcommand name.
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      const fs::path snap = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      const auto stage_it = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return std::any_of(commands.begin(), commands.end(), [&](const auto& c) { return c.first->get_name() == a; });
      });
      if (stage_it == args.end()) throw InvalidArgument("--config needs a subcommand");
      const auto extra = snapshot_args(snap, *stage_it);
      args.insert(stage_it + 1, extra.begin(), extra.end());
      break;
    }
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  for (auto& [s, run] : commands) {
    if (s->parsed()) return run();
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UnsupportedLanguage& e) {
    std::cerr << "error[unsupported-language]: " << e.what() << '\n';
    return kUnsupported;
  } catch (const InvalidArgument& e) {
    std::cerr << "error[invalid-argument]: " << e.what() << '\n';
    return kInvalid;
  } catch (const IoError& e) {
    std::cerr << "error[io]: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error[format]: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
