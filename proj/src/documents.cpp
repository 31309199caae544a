#include <algorithm>
#include <cctype>

#include "llmgate/documents.hpp"
#include "llmgate/error.hpp"

namespace llmgate {

std::string_view to_string(DocumentFormat format) noexcept {
  switch (format) {
    case DocumentFormat::text: return "text";
    case DocumentFormat::markdown: return "markdown";
    case DocumentFormat::code: return "code";
    case DocumentFormat::pdf_extracted: return "pdf-extracted";
  }
  return "text";
}

DocumentFormat format_from_string(std::string_view name) {
  if (name == "text" || name == "txt") return DocumentFormat::text;
  if (name == "markdown" || name == "md") return DocumentFormat::markdown;
  if (name == "code") return DocumentFormat::code;
  if (name == "pdf" || name == "pdf-extracted") return DocumentFormat::pdf_extracted;
  throw Error(ErrorCode::unsupported_format, "unsupported document format '" + std::string(name) + "'");
}

DocumentFormat format_from_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".txt" || ext == ".text") return DocumentFormat::text;
  if (ext == ".md" || ext == ".markdown") return DocumentFormat::markdown;
  if (ext == ".pdf") return DocumentFormat::pdf_extracted;
  static constexpr std::string_view kCode[] = {
      ".c",  ".cc", ".cpp", ".cxx", ".h",     ".hh",  ".hpp", ".py",   ".js", ".ts",  ".tsx", ".jsx",
      ".go", ".rs", ".java", ".kt", ".scala", ".rb",  ".php", ".cs",   ".sh", ".sql", ".swift", ".lua",
      ".r",  ".m",  ".json", ".yaml", ".yml", ".toml", ".cmake", ".html", ".css"};
  for (auto c : kCode) {
    if (ext == c) return DocumentFormat::code;
  }
  throw Error(ErrorCode::unsupported_format,
              "unsupported file extension '" + ext + "' for " + path.filename().string());
}

namespace {

std::string normalize_newlines(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < in.size() && in[i + 1] == '\n') ++i;
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

bool is_space(char c) {
  return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
}

bool is_utf8_continuation(char c) {
  return (static_cast<unsigned char>(c) & 0xC0) == 0x80;
}

// Largest p in (lo, pos] such that body[p-1] is whitespace; failing that the
// largest p in (lo, pos] on a UTF-8 character boundary; failing that pos.
std::size_t snap_back(std::string_view body, std::size_t lo, std::size_t pos) {
  for (std::size_t p = pos; p > lo; --p) {
    if (is_space(body[p - 1])) return p;
  }
  for (std::size_t p = pos; p > lo; --p) {
    if (p == body.size() || !is_utf8_continuation(body[p])) return p;
  }
  return pos;
}

}  // namespace

std::string FixturePdfExtractor::extract(std::string_view bytes) const {
  if (!bytes.starts_with("%PDF-")) {
    throw Error(ErrorCode::extractor_failure, "not a PDF document (missing %PDF- header)");
  }
  const std::string text = normalize_newlines(bytes);
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    if (!line.starts_with('%')) {
      out.append(line);
      out.push_back('\n');
    }
    pos = nl + 1;
  }
  if (out.find_first_not_of(" \n\t") == std::string::npos) {
    throw Error(ErrorCode::extractor_failure, "PDF contains no extractable text");
  }
  return out;
}

Document ingest(std::string_view bytes, DocumentFormat format, std::string doc_id, std::string source_name,
                const Extractor* pdf_extractor, std::int64_t ingested_at_ms) {
  if (bytes.empty()) throw Error(ErrorCode::empty_input, "document is empty");
  Document doc;
  doc.doc_id = std::move(doc_id);
  doc.source_name = std::move(source_name);
  doc.format = format;
  doc.ingested_at_ms = ingested_at_ms;
  switch (format) {
    case DocumentFormat::text:
    case DocumentFormat::markdown:
    case DocumentFormat::code:
      doc.body = normalize_newlines(bytes);
      break;
    case DocumentFormat::pdf_extracted:
      if (pdf_extractor == nullptr) {
        throw Error(ErrorCode::unsupported_format, "no PDF extractor configured");
      }
      doc.body = pdf_extractor->extract(bytes);
      break;
  }
  return doc;
}

std::vector<Chunk> chunk(const Document& document, std::int64_t chunk_tokens, std::int64_t overlap,
                         int token_divisor) {
  if (chunk_tokens < 1 || overlap < 0 || overlap >= chunk_tokens || token_divisor < 1) {
    throw Error(ErrorCode::invalid_parameters,
                "chunking requires chunk_tokens >= 1 and 0 <= overlap < chunk_tokens (got " +
                    std::to_string(chunk_tokens) + ", " + std::to_string(overlap) + ")");
  }
  const std::string_view body = document.body;
  const auto divisor = static_cast<std::size_t>(token_divisor);
  const auto window = static_cast<std::size_t>(chunk_tokens) * divisor;
  const auto stride = static_cast<std::size_t>(chunk_tokens - overlap) * divisor;

  std::vector<Chunk> chunks;
  std::size_t start = 0;
  while (start < body.size()) {
    std::size_t end;
    std::size_t next_start;
    if (body.size() - start <= window) {
      end = body.size();
      next_start = body.size();
    } else {
      end = snap_back(body, start, start + window);
      next_start = snap_back(body, start, start + stride);
    }
    Chunk c;
    c.doc_id = document.doc_id;
    c.ordinal = chunks.size();
    c.chunk_id = document.doc_id + "#" + std::to_string(c.ordinal);
    c.start_byte = start;
    c.end_byte = end;
    c.text = std::string(body.substr(start, end - start));
    c.token_estimate = (c.text.size() + divisor - 1) / divisor;
    chunks.push_back(std::move(c));
    start = next_start;
  }
  return chunks;
}

std::vector<std::string> index_terms(std::string_view text) {
  std::vector<std::string> terms;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      terms.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) terms.push_back(std::move(current));
  return terms;
}

}  // namespace llmgate
