#include "laybench/textseg.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <unordered_map>

#include "laybench/error.hpp"
#include "laybench/jsonl.hpp"
#include "laybench/unicode.hpp"

namespace laybench::textseg {

namespace {

bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == U'’'; }
bool is_terminator(char32_t cp) { return cp == U'.' || cp == U'!' || cp == U'?'; }
bool is_closer(char32_t cp) {
  return cp == U'"' || cp == U'\'' || cp == U')' || cp == U']' || cp == U'”' || cp == U'’';
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

constexpr std::array kAbbreviations = {
    "al",   "approx", "ca",  "cf",   "co",   "dept", "dr",    "e.g",  "eq",  "eqs",  "fig", "figs",
    "i.e",  "inc",    "jr",  "ltd",  "mr",   "mrs",  "ms",    "no",   "nos", "prof", "ref", "refs",
    "resp", "sp",     "spp", "sr",   "st",   "univ", "var",   "viz",  "vol", "vols", "vs",  "jan",
    "feb",  "mar",    "apr", "aug",  "sep",  "sept", "oct",   "nov",  "dec", "ph.d", "u.s", "u.k"};

struct Lexicon {
  std::unordered_map<std::string, Tag> words;

  void add(std::initializer_list<const char*> list, Tag tag) {
    for (const char* w : list) words.emplace(w, tag);
  }

  static std::string third_person(const std::string& base) {
    auto ends = [&](std::string_view suffix) { return base.ends_with(suffix); };
    if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) return base + "es";
    if (base.size() > 1 && ends("y") && std::string_view("aeiou").find(base[base.size() - 2]) == std::string_view::npos) {
      return base.substr(0, base.size() - 1) + "ies";
    }
    return base + "s";
  }

  Lexicon() {
    add({"the", "a", "an", "this", "these", "those", "each", "every", "some", "any", "no", "all", "both", "either",
         "neither", "its", "their", "his", "her", "our", "my", "your", "whose", "another"},
        Tag::kDet);

    // Pronouns and function words never head a noun phrase.
    add({"i",       "me",        "you",      "he",     "him",      "she",     "it",     "we",       "us",
         "they",    "them",      "myself",   "itself", "himself",  "herself", "ourselves", "themselves",
         "yourself", "who",      "whom",     "which",  "what",     "that",    "of",     "in",       "on",
         "at",      "by",        "for",      "with",   "from",     "to",      "into",   "onto",     "about",
         "over",    "under",     "between",  "among",  "through",  "during",  "before", "after",    "above",
         "below",   "across",    "against",  "within", "without",  "via",     "per",    "than",     "as",
         "upon",    "toward",    "towards",  "around", "behind",   "beyond",  "despite", "since",   "until",
         "while",   "whereas",   "because",  "although", "though", "if",      "unless", "whether",  "and",
         "or",      "but",       "nor",      "so",     "yet",      "not",     "also",   "very",     "too",
         "then",    "there",     "here",     "thus",   "however",  "therefore", "moreover", "furthermore",
         "only",    "just",      "even",     "still",  "already",  "often",   "always", "never",    "sometimes",
         "how",     "when",      "where",    "why",    "again",    "once",    "rather", "instead",  "yes"},
        Tag::kOther);

    add({"is",     "are",    "was",   "were",   "be",     "been",   "being",  "am",      "has",   "have",
         "had",    "having", "do",    "does",   "did",    "done",   "can",    "could",   "may",   "might",
         "will",   "would",  "shall", "should", "must",   "sat",    "ran",    "found",   "made",  "took",
         "taken",  "gave",   "given", "got",    "went",   "gone",   "came",   "saw",     "seen",  "knew",
         "known",  "thought", "said", "became", "led",    "bound",  "lost",   "kept",    "held",  "told",
         "felt",   "left",   "brought", "began", "begun", "wrote",  "written", "built",  "sought", "understood",
         "drove",  "driven", "spoke", "spoken", "chose",  "chosen", "grew",   "grown",   "shown", "fell",
         "fallen", "rose",   "risen", "ate",    "eaten",  "met",    "paid",   "sent",    "spent", "won"},
        Tag::kVerb);

    const char* verb_bases[] = {
        "show",    "grow",      "divide",   "sit",      "run",      "chase",       "find",       "use",
        "make",    "take",      "give",     "get",      "go",       "come",        "see",        "know",
        "think",   "say",       "become",   "suggest",  "indicate", "reveal",      "demonstrate", "identify",
        "determine", "affect",  "cause",    "lead",     "require",  "include",     "involve",    "provide",
        "increase", "decrease", "reduce",   "remain",   "appear",   "seem",        "help",       "allow",
        "enable",  "regulate",  "control",  "contribute", "depend", "produce",     "form",       "develop",
        "describe", "explain",  "report",   "observe",  "study",    "examine",     "investigate", "test",
        "measure", "compare",   "confirm",  "propose",  "contain",  "consist",     "mean",       "need",
        "want",    "live",      "die",      "eat",      "infect",   "bind",        "encode",     "express",
        "interact", "act",      "occur",    "exist",    "happen",   "change",      "move",       "spread",
        "protect", "prevent",   "treat",    "lose",     "keep",     "hold",        "let",        "put",
        "set",     "tell",      "feel",     "leave",    "bring",    "begin",       "write",      "read",
        "build",   "try",       "call",     "work",     "turn",     "start",       "look",       "seek",
        "understand", "learn",  "carry",    "apply",    "reflect",  "trigger",     "promote",    "inhibit",
        "activate", "block",    "drive",    "enter",    "speak",    "choose",      "fall",       "rise",
        "meet",    "pay",       "send",     "spend",    "win",      "ask",         "seek",       "appear",
        "suffer",  "survive",   "differ",   "vary",     "rely",     "aim",         "enhance",    "impair",
        "mediate", "modulate",  "alter",    "predict",  "estimate", "detect",      "assess",     "analyse",
        "analyze", "evaluate",  "represent", "remove",  "replace",  "split",       "omit",       "add"};
    for (const char* base : verb_bases) {
      words.emplace(base, Tag::kVerb);
      words.emplace(third_person(base), Tag::kVerb);
    }

    add({"red",      "blue",      "green",    "black",   "white",    "yellow",   "big",      "small",
         "large",    "little",    "long",     "short",   "high",     "low",      "new",      "old",
         "young",    "good",      "bad",      "great",   "important", "different", "same",   "other",
         "similar",  "many",      "much",     "more",    "most",     "less",     "least",    "few",
         "several",  "various",   "numerous", "first",   "second",   "third",    "last",     "next",
         "early",    "late",      "major",    "minor",   "main",     "key",      "common",   "rare",
         "human",    "simple",    "complex",  "difficult", "easy",   "hard",     "clear",    "strong",
         "weak",     "specific",  "novel",    "recent",  "current",  "possible", "likely",   "whole",
         "full",     "free",      "general",  "single",  "multiple", "certain",  "particular", "severe",
         "mild",     "normal",    "healthy",  "sick",    "lay",      "thorough", "quick",    "slow",
         "fast",     "hot",       "cold",     "warm",    "deep",     "wide",     "narrow",   "true",
         "false",    "real",      "able",     "such",    "own",      "overall",  "average",  "whole",
         "arcane",   "brief",     "fine",     "rich",    "poor",     "safe",     "useful",   "due"},
        Tag::kAdj);

    // Nouns that the suffix rules would otherwise mislabel.
    add({"family",  "supply",    "assembly", "anomaly", "butterfly", "fly",     "ally",     "reply",
         "jelly",   "monopoly",  "signal",   "animal",  "journal",   "hospital", "trial",   "interval",
         "terminal", "material", "individual", "arrival", "approval", "proposal", "removal", "survival",
         "total",   "portal",    "capital",  "crystal", "metal",     "canal",    "mammal",  "manual",
         "clinic",  "topic",     "logic",    "music",   "traffic",   "mechanic", "critic",  "fabric",
         "panic",   "republic",  "seed",    "bed",       "speed",    "feed",    "creed",
         "thing",   "king",      "ring",     "spring",  "string",    "wing",     "evening", "morning",
         "ceiling", "building",  "meaning",  "feeling", "finding",   "training", "setting", "beginning",
         "summary", "summaries", "abstract", "article", "cell",      "cells",    "gene",    "genes"},
        Tag::kNoun);
  }
};

const Lexicon& lexicon() {
  static const Lexicon instance;
  return instance;
}

bool has_letter(std::string_view word) {
  for (std::size_t i = 0; i < word.size();) {
    auto d = unicode::decode_at(word, i);
    if (unicode::is_alpha(d.cp)) return true;
    i += d.length;
  }
  return false;
}

}  // namespace

Span make_span(std::string_view source, std::size_t start, std::size_t end) {
  if (start >= end || end > source.size()) {
    throw PreconditionError("invalid span [" + std::to_string(start) + "," + std::to_string(end) + ")");
  }
  return Span{start, end, std::string(source.substr(start, end - start))};
}

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::kDet: return "DET";
    case Tag::kAdj: return "ADJ";
    case Tag::kNoun: return "NOUN";
    case Tag::kVerb: return "VERB";
    case Tag::kOther: return "OTHER";
  }
  return "OTHER";
}

bool is_abbreviation(std::string_view word) {
  const auto lower = ascii_lower(word);
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lower) != kAbbreviations.end();
}

std::vector<Span> split_sentences(std::string_view text) {
  std::vector<Span> sentences;
  std::size_t start = std::string_view::npos;
  std::size_t last_content_end = 0;

  auto emit = [&](std::size_t end) {
    if (start != std::string_view::npos && end > start) sentences.push_back(make_span(text, start, end));
    start = std::string_view::npos;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    auto d = unicode::decode_at(text, i);
    if (unicode::is_space(d.cp)) {
      i += d.length;
      continue;
    }
    if (start == std::string_view::npos) start = i;

    if (!is_terminator(d.cp)) {
      i += d.length;
      last_content_end = i;
      continue;
    }

    // Terminator run, then closing punctuation.
    std::size_t j = i;
    std::size_t terminators = 0;
    bool only_period = true;
    while (j < text.size()) {
      auto t = unicode::decode_at(text, j);
      if (!is_terminator(t.cp)) break;
      only_period = only_period && t.cp == U'.';
      ++terminators;
      j += t.length;
    }
    while (j < text.size()) {
      auto t = unicode::decode_at(text, j);
      if (!is_closer(t.cp)) break;
      j += t.length;
    }
    last_content_end = j;

    const bool at_break = j >= text.size() || unicode::is_space(unicode::decode_at(text, j).cp);
    if (!at_break) {
      i = j;
      continue;
    }

    bool guarded = false;
    if (only_period && terminators == 1) {
      std::size_t word_start = i;
      while (word_start > start) {
        // Scan back over non-space bytes; multibyte sequences never contain
        // ASCII whitespace bytes.
        char c = text[word_start - 1];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') break;
        --word_start;
      }
      std::string_view word = text.substr(word_start, i - word_start);
      while (!word.empty() && (word.front() == '(' || word.front() == '[' || word.front() == '"')) word.remove_prefix(1);
      if (is_abbreviation(word)) {
        guarded = true;
      } else if (!word.empty()) {
        auto first = unicode::decode_at(word, 0);
        guarded = first.length == word.size() && unicode::is_upper(first.cp);
      }
    }
    i = j;
    if (!guarded) emit(j);
  }
  emit(last_content_end);
  return sentences;
}

std::vector<Span> split_words(std::string_view text) {
  std::vector<Span> words;
  std::size_t i = 0;
  while (i < text.size()) {
    auto d = unicode::decode_at(text, i);
    if (!unicode::is_alnum(d.cp)) {
      i += d.length;
      continue;
    }
    const std::size_t start = i;
    i += d.length;
    while (i < text.size()) {
      auto next = unicode::decode_at(text, i);
      if (unicode::is_alnum(next.cp)) {
        i += next.length;
        continue;
      }
      if (is_apostrophe(next.cp) && i + next.length < text.size() &&
          unicode::is_alnum(unicode::decode_at(text, i + next.length).cp)) {
        i += next.length;
        continue;
      }
      break;
    }
    words.push_back(make_span(text, start, i));
  }
  return words;
}

std::size_t count_letters(std::string_view word) {
  std::size_t letters = 0;
  for (std::size_t i = 0; i < word.size();) {
    auto d = unicode::decode_at(word, i);
    if (unicode::is_alpha(d.cp)) ++letters;
    i += d.length;
  }
  return letters;
}

std::vector<Span> lex(std::string_view text) {
  std::vector<Span> tokens;
  const auto words = split_words(text);
  std::size_t w = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (w < words.size() && words[w].start == i) {
      tokens.push_back(words[w]);
      i = words[w].end;
      ++w;
      continue;
    }
    auto d = unicode::decode_at(text, i);
    if (!unicode::is_space(d.cp)) tokens.push_back(make_span(text, i, i + d.length));
    i += d.length;
  }
  return tokens;
}

std::map<Ngram, std::size_t> ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  if (n < 1) throw PreconditionError("n-gram order must be >= 1");
  std::map<Ngram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t ngram_total(const std::map<Ngram, std::size_t>& counts) {
  std::size_t total = 0;
  for (const auto& [gram, count] : counts) total += count;
  return total;
}

Tag tag_word(std::string_view word) {
  if (word.empty()) return Tag::kOther;
  const std::string lower = unicode::fold_case(word);
  const auto& words = lexicon().words;
  if (auto it = words.find(lower); it != words.end()) return it->second;
  if (!has_letter(word)) return Tag::kOther;

  auto ends = [&](std::string_view suffix, std::size_t min_length) {
    return lower.size() >= min_length && lower.ends_with(suffix);
  };
  if (ends("ly", 5)) return Tag::kOther;
  for (std::string_view suffix : {"tion", "sion", "ness", "ity", "ment", "ism", "ist", "ance", "ence", "ogy", "ship", "hood"}) {
    if (ends(suffix, suffix.size() + 2)) return Tag::kNoun;
  }
  if (ends("ure", 6)) return Tag::kNoun;
  for (std::string_view suffix : {"ous", "ive", "al", "ic", "ful", "less", "able", "ible"}) {
    if (ends(suffix, suffix.size() + 2)) return Tag::kAdj;
  }
  if (ends("ed", 5) || ends("ing", 6)) return Tag::kVerb;
  return Tag::kNoun;
}

std::vector<TaggedToken> tag_tokens(std::string_view text) {
  std::vector<TaggedToken> tagged;
  for (auto& span : lex(text)) {
    const bool is_word = unicode::is_alnum(unicode::decode_at(span.text, 0).cp);
    Tag tag = is_word ? tag_word(span.text) : Tag::kOther;
    tagged.push_back(TaggedToken{span.text, tag, std::move(span)});
  }
  return tagged;
}

std::vector<Span> extract_noun_phrases(std::string_view text) {
  const auto tokens = tag_tokens(text);
  std::vector<Span> phrases;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t j = i;
    if (tokens[j].tag == Tag::kDet) ++j;
    while (j < tokens.size() && tokens[j].tag == Tag::kAdj) ++j;
    std::size_t nouns = 0;
    while (j < tokens.size() && tokens[j].tag == Tag::kNoun) {
      ++j;
      ++nouns;
    }
    if (nouns == 0) {
      ++i;
      continue;
    }
    phrases.push_back(make_span(text, tokens[i].span.start, tokens[j - 1].span.end));
    i = j;
  }
  return phrases;
}

NpSidecar NpSidecar::load(const std::filesystem::path& path) {
  NpSidecar sidecar;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& object) {
    const auto where = path.string() + ":" + std::to_string(line);
    if (!object.contains("id") || !object["id"].is_string()) throw ParseError(where + ": missing string field \"id\"");
    if (!object.contains("np_spans") || !object["np_spans"].is_array()) {
      throw ParseError(where + ": missing array field \"np_spans\"");
    }
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& pair : object["np_spans"]) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() || !pair[1].is_number_unsigned()) {
        throw ParseError(where + ": np_spans entries must be [start, end] pairs of non-negative integers");
      }
      spans.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
    }
    const auto id = object["id"].get<std::string>();
    if (sidecar.contains(id)) throw DuplicateError(where + ": duplicate id \"" + id + "\"");
    sidecar.add(id, std::move(spans));
  });
  return sidecar;
}

void NpSidecar::add(std::string id, std::vector<std::pair<std::size_t, std::size_t>> codepoint_spans) {
  spans_[std::move(id)] = std::move(codepoint_spans);
}

std::vector<Span> NpSidecar::spans_for(const std::string& id, std::string_view text) const {
  auto it = spans_.find(id);
  if (it == spans_.end()) return {};
  std::vector<Span> spans;
  for (auto [start, end] : it->second) {
    if (start >= end) throw ValidationError("noun-phrase span for \"" + id + "\" is empty or reversed");
    std::size_t byte_start = 0;
    std::size_t byte_end = 0;
    try {
      byte_start = unicode::codepoint_to_byte_offset(text, start);
      byte_end = unicode::codepoint_to_byte_offset(text, end);
    } catch (const PreconditionError&) {
      throw ValidationError("noun-phrase span for \"" + id + "\" lies outside the document");
    }
    spans.push_back(make_span(text, byte_start, byte_end));
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
  for (std::size_t k = 1; k < spans.size(); ++k) {
    if (spans[k].start < spans[k - 1].end) throw ValidationError("noun-phrase spans for \"" + id + "\" overlap");
  }
  return spans;
}

std::vector<Span> NounPhraseSource::noun_phrases(const std::string& id, std::string_view text) const {
  if (sidecar_.contains(id)) return sidecar_.spans_for(id, text);
  return extract_noun_phrases(text);
}

}  // namespace laybench::textseg
