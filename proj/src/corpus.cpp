#include "idpt/corpus.hpp"

#include <fstream>
#include <sstream>

#include "idpt/error.hpp"

namespace idpt {

namespace {

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string::npos;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

void CodeDocument::validate() const {
  if (identifier_labels.size() != code_tokens.size()) {
    throw FormatError("identifier_labels length " + std::to_string(identifier_labels.size()) +
                      " != code_tokens length " + std::to_string(code_tokens.size()));
  }
  for (auto y : identifier_labels) {
    if (y > 1) throw FormatError("identifier label must be 0 or 1");
  }
}

nlohmann::json to_json(const CodeDocument& doc) {
  return {{"nl_tokens", doc.nl_tokens},
          {"code_tokens", doc.code_tokens},
          {"language", doc.language},
          {"identifier_labels", doc.identifier_labels}};
}

CodeDocument document_from_json(const nlohmann::json& j) {
  CodeDocument doc;
  try {
    doc.nl_tokens = j.at("nl_tokens").get<std::vector<std::string>>();
    doc.code_tokens = j.at("code_tokens").get<std::vector<std::string>>();
    doc.language = j.at("language").get<std::string>();
    doc.identifier_labels = j.at("identifier_labels").get<std::vector<std::uint8_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed document: ") + e.what());
  }
  doc.validate();
  return doc;
}

void ingest(std::istream& in, CorpusFormat /*format*/, const std::function<void(RawRecord)>& on_record,
            const std::function<void(LineError)>& on_error, const std::set<std::string>& languages) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      on_error({lineno, std::string("invalid JSON: ") + e.what()});
      continue;
    }
    if (!j.is_object()) {
      on_error({lineno, "record is not an object"});
      continue;
    }
    auto string_field = [&](const char* key) -> std::optional<std::string> {
      auto it = j.find(key);
      if (it == j.end() || it->is_null()) return std::nullopt;
      if (!it->is_string()) throw FormatError(std::string("field '") + key + "' is not a string");
      return it->get<std::string>();
    };
    RawRecord rec;
    try {
      auto code = string_field("code");
      auto lang = string_field("language");
      if (!code || blank(*code)) throw FormatError("missing or empty 'code'");
      if (!lang || lang->empty()) throw FormatError("missing 'language'");
      if (!languages.empty() && !languages.contains(*lang)) throw FormatError("unknown language '" + *lang + "'");
      rec.code = std::move(*code);
      rec.language = std::move(*lang);
      rec.docstring = string_field("docstring");
    } catch (const FormatError& e) {
      on_error({lineno, e.what()});
      continue;
    }
    on_record(std::move(rec));
  }
}

void ingest(const std::filesystem::path& path, CorpusFormat format,
            const std::function<void(RawRecord)>& on_record,
            const std::function<void(LineError)>& on_error, const std::set<std::string>& languages) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  ingest(in, format, on_record, on_error, languages);
}

IngestResult ingest_all(const std::filesystem::path& path, const std::set<std::string>& languages) {
  IngestResult result;
  ingest(
      path, CorpusFormat::kJsonLines, [&](RawRecord r) { result.records.push_back(std::move(r)); },
      [&](LineError e) { result.errors.push_back(std::move(e)); }, languages);
  return result;
}

CodeDocument normalize(const RawRecord& record, const LanguageLexer& lexer) {
  if (record.language != lexer.language()) throw UnsupportedLanguage(record.language);
  CodeDocument doc;
  doc.language = record.language;
  if (record.docstring) doc.nl_tokens = split_whitespace(*record.docstring);
  const auto tokens = lexer.lex(record.code);
  doc.identifier_labels = label_identifiers(tokens);
  doc.code_tokens.reserve(tokens.size());
  for (const auto& t : tokens) doc.code_tokens.push_back(t.text);
  return doc;
}

CodeDocument normalize(const RawRecord& record, const LanguageRegistry& registry) {
  return normalize(record, registry.get(record.language));
}

std::vector<CodeDocument> normalize_all(const std::vector<RawRecord>& records, const LanguageRegistry& registry,
                                        std::vector<std::string>* warnings) {
  std::vector<CodeDocument> docs;
  docs.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto doc = normalize(records[i], registry);
    if (doc.code_tokens.empty()) {
      if (warnings) warnings->push_back("record " + std::to_string(i) + ": lexer produced no tokens, dropped");
      continue;
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

CorpusStats compute_stats(const std::vector<CodeDocument>& docs) {
  CorpusStats stats;
  for (const auto& doc : docs) {
    auto& s = stats[doc.language];
    (doc.bimodal() ? s.with_nl : s.without_nl) += 1;
    s.code_tokens += doc.code_tokens.size();
    for (auto y : doc.identifier_labels) s.identifier_tokens += y;
  }
  return stats;
}

nlohmann::json to_json(const CorpusStats& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [lang, s] : stats) {
    j[lang] = {{"with_nl", s.with_nl},
               {"without_nl", s.without_nl},
               {"identifier_tokens", s.identifier_tokens},
               {"code_tokens", s.code_tokens},
               {"identifier_rate", s.identifier_rate()}};
  }
  return j;
}

std::vector<CodeDocument> read_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open document file: " + path.string());
  std::vector<CodeDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      docs.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

void write_documents(const std::filesystem::path& path, const std::vector<CodeDocument>& docs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write document file: " + path.string());
  for (const auto& d : docs) out << to_json(d).dump() << '\n';
}

}  // namespace idpt
