#include <array>
#include <cmath>

#include "laybench/hashing.hpp"
#include "laybench/llmgate.hpp"
#include "laybench/unicode.hpp"

namespace laybench::llm {

namespace {

constexpr std::array kVocabulary = {
    "people",  "body",    "cells",   "help",    "work",    "change",  "show",    "simple", "study",   "team",
    "found",   "small",   "part",    "way",     "often",   "many",    "helps",   "keeps",  "makes",   "water",
    "blood",   "brain",   "heart",   "sugar",   "food",    "light",   "signal",  "growth", "health",  "disease",
    "germs",   "tiny",    "large",   "common",  "new",     "early",   "later",   "years",  "life",    "energy",
    "plants",  "animals", "mice",    "flies",   "worms",   "genes",   "protein", "copies", "pieces",  "parts",
    "inside",  "outside", "together", "control", "balance", "damage", "repair",  "defend", "attack",  "spread"};

constexpr std::string_view kRefusalMarker = "[[REFUSE]]";
constexpr std::string_view kRaterOpening = "Score the layness";

std::string joined_prompt(const ChatRequest& request) {
  std::string prompt;
  for (const auto& m : request.messages) {
    if (!prompt.empty()) prompt += "\n";
    prompt += m.content;
  }
  return prompt;
}

// Words of the part of the prompt after its last "Text:"/"Article:"/"Summary:"
// slot label; that is the input the prompt is about.
std::vector<std::string> source_words(const std::string& prompt) {
  std::size_t cut = 0;
  for (std::string_view label : {"Text: ", "Article: ", "Summary: "}) {
    auto pos = prompt.rfind(label);
    if (pos != std::string::npos) cut = std::max(cut, pos + label.size());
  }
  std::vector<std::string> words;
  for (const auto& w : textseg::split_words(std::string_view(prompt).substr(cut))) words.push_back(w.text);
  return words;
}

std::string capitalize(std::string word) {
  if (!word.empty() && word[0] >= 'a' && word[0] <= 'z') word[0] = static_cast<char>(word[0] - 'a' + 'A');
  return word;
}

std::string generate_text(SplitMix64& rng, const std::vector<std::string>& source, std::size_t words) {
  std::string out;
  std::size_t in_sentence = 0;
  std::size_t sentence_length = 6 + rng.below(9);
  for (std::size_t i = 0; i < words; ++i) {
    std::string word;
    if (!source.empty() && rng.below(2) == 0) {
      word = source[rng.below(source.size())];
    } else {
      word = kVocabulary[rng.below(kVocabulary.size())];
    }
    if (in_sentence == 0) {
      word = capitalize(std::move(word));
      if (!out.empty()) out += ' ';
    } else {
      out += ' ';
    }
    out += word;
    if (++in_sentence == sentence_length || i + 1 == words) {
      out += '.';
      in_sentence = 0;
      sentence_length = 6 + rng.below(9);
    }
  }
  return out;
}

std::string core_of(std::string_view piece) {
  std::size_t start = 0;
  while (start < piece.size() && (piece[start] == ' ' || piece[start] == '\n' || piece[start] == '\t' || piece[start] == '\r')) {
    ++start;
  }
  std::size_t end = piece.size();
  while (end > start && (piece[end - 1] == ' ' || piece[end - 1] == '\n' || piece[end - 1] == '\t' || piece[end - 1] == '\r')) {
    --end;
  }
  return unicode::fold_case(piece.substr(start, end - start));
}

std::vector<std::string> preferred_words(const std::string& backend_id, const std::string& prefix, std::size_t count) {
  SplitMix64 rng(hash64(backend_id + '\x1f' + prefix));
  std::vector<std::string> words;
  words.reserve(count);
  for (std::size_t i = 0; i < count; ++i) words.emplace_back(kVocabulary[rng.below(kVocabulary.size())]);
  return words;
}

double default_mask_ce(const std::string& masked_text, const textseg::Span& span) {
  const auto words = textseg::split_words(span.text);
  double letters = 0;
  for (const auto& w : words) letters += static_cast<double>(textseg::count_letters(w.text));
  const double per_word = words.empty() ? 0.0 : letters / static_cast<double>(words.size());
  const double noise = SplitMix64(hash64(masked_text)).unit();
  return 0.5 + 0.45 * per_word + 0.5 * noise;
}

}  // namespace

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {}

std::vector<std::string> MockBackend::split_pieces(std::string_view text) {
  const auto tokens = textseg::lex(text);
  if (tokens.empty()) return text.empty() ? std::vector<std::string>{} : std::vector<std::string>{std::string(text)};
  std::vector<std::string> pieces;
  std::size_t cursor = 0;
  for (const auto& token : tokens) {
    pieces.emplace_back(text.substr(cursor, token.end - cursor));
    cursor = token.end;
  }
  pieces.back() += std::string(text.substr(cursor));
  return pieces;
}

ChatResponse MockBackend::chat(const ChatRequest& request) {
  if (options_.chat_script) {
    if (auto scripted = options_.chat_script(request)) return *scripted;
  }
  const std::string prompt = joined_prompt(request);
  const auto prompt_words = textseg::split_words(prompt).size();

  ChatResponse response;
  response.usage.prompt = static_cast<int>(prompt_words);
  if (prompt.find(kRefusalMarker) != std::string::npos) {
    response.text = "I'm sorry, but I can't help with that request.";
    response.finish_reason = FinishReason::kRefusal;
    return response;
  }

  const auto seed = request.seed.value_or(options_.default_seed);
  auto keyed = request.to_json();
  keyed["mock_seed"] = seed;
  SplitMix64 rng(hash64(keyed.dump()));

  if (prompt.starts_with(kRaterOpening)) {
    response.text = "Marks: " + std::to_string(1 + rng.below(10));
    response.usage.completion = 2;
    return response;
  }

  std::size_t wanted = 60 + rng.below(360);
  const auto cap = static_cast<std::size_t>(request.max_output_tokens);
  if (prompt_words > options_.context_tokens) {
    wanted = std::min<std::size_t>(cap, 16);
    response.finish_reason = FinishReason::kLength;
  } else if (wanted > cap) {
    wanted = cap;
    response.finish_reason = FinishReason::kLength;
  }
  response.text = generate_text(rng, source_words(prompt), wanted);
  response.usage.completion = static_cast<int>(wanted);
  return response;
}

std::string MockBackend::preferred_continuation(const std::string& backend_id, const std::string& prefix,
                                                std::size_t words) const {
  std::string out;
  for (const auto& w : preferred_words(backend_id, prefix, words)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

ScoreResponse MockBackend::score_continuation(const ScoreRequest& request) {
  if (!options_.supports_logprobs) {
    throw CapabilityError("backend \"" + request.backend_id + "\" does not return token log-probabilities");
  }
  const auto pieces = split_pieces(request.continuation);
  ScoreResponse response;
  if (options_.logprob_script) {
    if (auto scripted = options_.logprob_script(request)) {
      if (scripted->size() != pieces.size()) {
        throw BackendError("scripted logprobs do not match the continuation's " + std::to_string(pieces.size()) +
                               " tokens",
                           false);
      }
      for (std::size_t i = 0; i < pieces.size(); ++i) response.token_logprobs.push_back({pieces[i], (*scripted)[i]});
      return response;
    }
  }
  const auto preferred = preferred_words(request.backend_id, request.prefix, pieces.size());
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const auto core = core_of(pieces[i]);
    double logprob = -0.05;
    if (core != preferred[i]) {
      SplitMix64 rng(hash64(request.prefix + '\x1f' + std::to_string(i) + '\x1f' + core));
      logprob = -(0.5 + 19.5 * rng.unit());
    }
    response.token_logprobs.push_back({pieces[i], logprob});
  }
  return response;
}

MaskScoreResponse MockBackend::score_masked(const MaskScoreRequest& request) {
  if (!options_.supports_mask) {
    throw CapabilityError("backend \"" + request.backend_id + "\" does not support masked-span scoring");
  }
  MaskScoreResponse response;
  for (const auto& span : request.spans) {
    const auto masked = apply_mask(request.text, span, request.mask_token);
    double ce = 0;
    if (options_.constant_ce) {
      ce = *options_.constant_ce;
    } else if (options_.mask_ce) {
      ce = options_.mask_ce(masked, span);
    } else {
      ce = default_mask_ce(masked, span);
    }
    response.span_ce.push_back(ce);
  }
  return response;
}

}  // namespace laybench::llm
