#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "idpt/lexer.hpp"
#include "json.hpp"

namespace idpt {

struct RawRecord {
  std::string code;
  std::optional<std::string> docstring;
  std::string language;
};

// One normalized corpus entry. identifier_labels is aligned with
// code_tokens; an empty nl_tokens means the document is unimodal.
struct CodeDocument {
  std::vector<std::string> nl_tokens;
  std::vector<std::string> code_tokens;
  std::string language;
  std::vector<std::uint8_t> identifier_labels;

  bool bimodal() const { return !nl_tokens.empty(); }
  // Throws FormatError when the label/token alignment is broken.
  void validate() const;

  friend bool operator==(const CodeDocument&, const CodeDocument&) = default;
};

nlohmann::json to_json(const CodeDocument& doc);
CodeDocument document_from_json(const nlohmann::json& j);

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

enum class CorpusFormat { kJsonLines };

// Streams records from a line-delimited corpus file in file order. Malformed
// lines go to `on_error` and reading continues. Throws IoError when the file
// cannot be opened. When `languages` is non-empty, records whose language is
// not in it are reported as malformed.
void ingest(const std::filesystem::path& path, CorpusFormat format,
            const std::function<void(RawRecord)>& on_record,
            const std::function<void(LineError)>& on_error,
            const std::set<std::string>& languages = {});
void ingest(std::istream& in, CorpusFormat format, const std::function<void(RawRecord)>& on_record,
            const std::function<void(LineError)>& on_error, const std::set<std::string>& languages = {});

struct IngestResult {
  std::vector<RawRecord> records;
  std::vector<LineError> errors;
};
IngestResult ingest_all(const std::filesystem::path& path, const std::set<std::string>& languages = {});

// Lexes the code (comments stripped) and splits the docstring on whitespace.
CodeDocument normalize(const RawRecord& record, const LanguageLexer& lexer);
// Looks up the record's lexer; throws UnsupportedLanguage naming the tag.
CodeDocument normalize(const RawRecord& record, const LanguageRegistry& registry);

// Normalizes a batch, dropping documents whose lexer output is empty. Each
// dropped record produces one warning string.
std::vector<CodeDocument> normalize_all(const std::vector<RawRecord>& records, const LanguageRegistry& registry,
                                        std::vector<std::string>* warnings = nullptr);

struct LanguageStats {
  std::size_t with_nl = 0;
  std::size_t without_nl = 0;
  std::size_t identifier_tokens = 0;
  std::size_t code_tokens = 0;

  double identifier_rate() const {
    return code_tokens == 0 ? 0.0 : static_cast<double>(identifier_tokens) / static_cast<double>(code_tokens);
  }
  friend bool operator==(const LanguageStats&, const LanguageStats&) = default;
};

using CorpusStats = std::map<std::string, LanguageStats>;

CorpusStats compute_stats(const std::vector<CodeDocument>& docs);
nlohmann::json to_json(const CorpusStats& stats);

std::vector<CodeDocument> read_documents(const std::filesystem::path& path);
void write_documents(const std::filesystem::path& path, const std::vector<CodeDocument>& docs);

}  // namespace idpt
