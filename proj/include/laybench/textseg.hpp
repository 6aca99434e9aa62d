#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Deterministic segmentation and rule-based noun-phrase chunking.
//
// Everything here is a pure function of its input. Offsets are UTF-8 byte
// offsets into the text passed in.
namespace laybench::textseg {

struct Span {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::string text;

  std::size_t size() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

Span make_span(std::string_view source, std::size_t start, std::size_t end);

enum class Tag { kDet, kAdj, kNoun, kVerb, kOther };
std::string_view to_string(Tag tag);

struct TaggedToken {
  std::string surface;
  Tag tag = Tag::kOther;
  Span span;
};

// Sentence spans, trimmed of surrounding whitespace. A boundary is a run of
// '.', '!' or '?' (optionally followed by closing quotes or brackets) that is
// followed by whitespace or the end of the text. A '.' ending a guarded
// abbreviation ("e.g.", "Fig.", single-letter initials) is not a boundary.
std::vector<Span> split_sentences(std::string_view text);

// Maximal runs of alphanumeric code points; an apostrophe (' or U+2019)
// between two alphanumerics is part of the word.
std::vector<Span> split_words(std::string_view text);

std::size_t count_letters(std::string_view word);

// Words plus every other non-whitespace code point as its own token.
std::vector<Span> lex(std::string_view text);

using Ngram = std::vector<std::string>;

// Multiset of n-grams as counts. Throws PreconditionError when n < 1.
std::map<Ngram, std::size_t> ngrams(const std::vector<std::string>& tokens, std::size_t n);
std::size_t ngram_total(const std::map<Ngram, std::size_t>& counts);

Tag tag_word(std::string_view word);
std::vector<TaggedToken> tag_tokens(std::string_view text);

// Non-overlapping left-to-right matches of DET? ADJ* NOUN+ over tag_tokens.
std::vector<Span> extract_noun_phrases(std::string_view text);

// True when `word` (case-insensitive, without the trailing '.') is on the
// bundled abbreviation list.
bool is_abbreviation(std::string_view word);

// Pre-extracted noun-phrase spans keyed by document id, read from a sidecar
// JSONL file of {"id": ..., "np_spans": [[start, end], ...]}. Sidecar offsets
// count code points; they are converted to byte offsets against the document
// text when looked up.
class NpSidecar {
 public:
  NpSidecar() = default;
  static NpSidecar load(const std::filesystem::path& path);

  void add(std::string id, std::vector<std::pair<std::size_t, std::size_t>> codepoint_spans);
  bool contains(const std::string& id) const { return spans_.contains(id); }

  // Spans for `id` resolved against `text`. Throws ValidationError when a span
  // is out of range, empty, or overlaps another.
  std::vector<Span> spans_for(const std::string& id, std::string_view text) const;

 private:
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> spans_;
};

// Where CEoNP gets its noun phrases: the sidecar when it has the document,
// otherwise the bundled chunker.
class NounPhraseSource {
 public:
  NounPhraseSource() = default;
  explicit NounPhraseSource(NpSidecar sidecar) : sidecar_(std::move(sidecar)) {}

  std::vector<Span> noun_phrases(const std::string& id, std::string_view text) const;

 private:
  NpSidecar sidecar_;
};

}  // namespace laybench::textseg
