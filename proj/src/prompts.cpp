#include "laybench/prompts.hpp"

#include <algorithm>

#include "laybench/error.hpp"
#include "laybench/hashing.hpp"
#include "laybench/jsonl.hpp"
#include "prompt_assets.hpp"

namespace laybench::prompts {

namespace {

constexpr std::array<std::string_view, 3> kKnownSlots = {"Abstract", "Article", "Summary"};
constexpr std::string_view kBuiltinVersion = "v1";

std::string_view builtin_body(TemplateId id) {
  switch (id) {
    case TemplateId::kExplain: return assets::kExplain;
    case TemplateId::kZeroShotLs: return assets::kZeroShotLs;
    case TemplateId::kRater: return assets::kRater;
    case TemplateId::kScorePrefix: return assets::kScorePrefix;
  }
  return {};
}

std::string describe_slots(const Bindings& bindings) {
  std::string out;
  for (const auto& [name, value] : bindings) out += (out.empty() ? "" : ", ") + name;
  return out.empty() ? "none" : out;
}

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kExplain: return "explain";
    case TemplateId::kZeroShotLs: return "zero_shot_ls";
    case TemplateId::kRater: return "rater";
    case TemplateId::kScorePrefix: return "score_prefix";
  }
  return "explain";
}

std::vector<std::string> declared_slots(TemplateId id) {
  switch (id) {
    case TemplateId::kExplain: return {"Abstract"};
    case TemplateId::kZeroShotLs: return {"Article"};
    case TemplateId::kRater: return {"Summary"};
    case TemplateId::kScorePrefix: return {"Article", "Summary"};
  }
  return {};
}

PromptTemplate::PromptTemplate(TemplateId id, std::string body, std::vector<std::string> slots)
    : id_(id), body_(std::move(body)), slots_(std::move(slots)) {
  std::map<std::string, int> seen;
  std::size_t literal_start = 0;
  std::size_t i = 0;
  while (i < body_.size()) {
    bool matched = false;
    if (body_[i] == '{') {
      for (auto known : kKnownSlots) {
        const auto marker = "{" + std::string(known) + "}";
        if (body_.compare(i, marker.size(), marker) == 0) {
          if (i > literal_start) pieces_.push_back({false, body_.substr(literal_start, i - literal_start)});
          pieces_.push_back({true, std::string(known)});
          ++seen[std::string(known)];
          i += marker.size();
          literal_start = i;
          matched = true;
          break;
        }
      }
    }
    if (!matched) ++i;
  }
  if (literal_start < body_.size()) pieces_.push_back({false, body_.substr(literal_start)});

  const std::string name(to_string(id_));
  for (const auto& slot : slots_) {
    auto it = seen.find(slot);
    if (it == seen.end() || it->second != 1) {
      throw ValidationError("template \"" + name + "\" must contain {" + slot + "} exactly once");
    }
  }
  for (const auto& [slot, count] : seen) {
    if (std::find(slots_.begin(), slots_.end(), slot) == slots_.end()) {
      throw ValidationError("template \"" + name + "\" contains undeclared slot {" + slot + "}");
    }
  }
}

std::string PromptTemplate::render(const Bindings& bindings) const {
  const std::string name(to_string(id_));
  for (const auto& slot : slots_) {
    if (!bindings.contains(slot)) {
      throw PreconditionError("template \"" + name + "\" is missing a binding for {" + slot + "} (got " +
                              describe_slots(bindings) + ")");
    }
  }
  for (const auto& [slot, value] : bindings) {
    if (std::find(slots_.begin(), slots_.end(), slot) == slots_.end()) {
      throw PreconditionError("template \"" + name + "\" has no slot {" + slot + "}");
    }
  }
  std::string out;
  for (const auto& piece : pieces_) out += piece.is_slot ? bindings.at(piece.text) : piece.text;
  return out;
}

std::string PromptTemplate::render_prefix(const Bindings& bindings, const std::string& open_slot) const {
  const std::string name(to_string(id_));
  if (std::find(slots_.begin(), slots_.end(), open_slot) == slots_.end()) {
    throw PreconditionError("template \"" + name + "\" has no slot {" + open_slot + "}");
  }
  if (bindings.contains(open_slot)) throw PreconditionError("the open slot {" + open_slot + "} must not be bound");
  for (const auto& [slot, value] : bindings) {
    if (std::find(slots_.begin(), slots_.end(), slot) == slots_.end()) {
      throw PreconditionError("template \"" + name + "\" has no slot {" + slot + "}");
    }
  }
  std::string out;
  for (const auto& piece : pieces_) {
    if (!piece.is_slot) {
      out += piece.text;
      continue;
    }
    if (piece.text == open_slot) return out;
    auto it = bindings.find(piece.text);
    if (it == bindings.end()) {
      throw PreconditionError("template \"" + name + "\" is missing a binding for {" + piece.text + "}");
    }
    out += it->second;
  }
  return out;
}

std::string PromptTemplate::excise_slots() const {
  std::string out;
  for (const auto& piece : pieces_) {
    if (!piece.is_slot) out += piece.text;
  }
  return out;
}

PromptRegistry::PromptRegistry(std::vector<PromptTemplate> templates, std::string version)
    : templates_(std::move(templates)), version_(std::move(version)) {}

const PromptRegistry& PromptRegistry::builtin() {
  static const PromptRegistry registry = [] {
    std::vector<PromptTemplate> templates;
    for (auto id : kAllTemplates) templates.emplace_back(id, std::string(builtin_body(id)), declared_slots(id));
    return PromptRegistry(std::move(templates), std::string(kBuiltinVersion));
  }();
  return registry;
}

PromptRegistry PromptRegistry::with_overrides(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) {
    throw ConfigError("prompt override directory does not exist: " + directory.string());
  }
  std::vector<PromptTemplate> templates;
  std::string overridden;
  for (auto id : kAllTemplates) {
    const auto path = directory / (std::string(to_string(id)) + ".txt");
    if (std::filesystem::exists(path)) {
      auto body = jsonl::read_file(path);
      templates.emplace_back(id, body, declared_slots(id));
      overridden += std::string(overridden.empty() ? "" : ",") + std::string(to_string(id)) + ":" +
                    sha256_hex(body).substr(0, 8);
    } else {
      templates.emplace_back(id, std::string(builtin_body(id)), declared_slots(id));
    }
  }
  auto version = std::string(kBuiltinVersion);
  if (!overridden.empty()) version += "+override(" + overridden + ")";
  return PromptRegistry(std::move(templates), std::move(version));
}

const PromptTemplate& PromptRegistry::get(TemplateId id) const {
  for (const auto& t : templates_) {
    if (t.id() == id) return t;
  }
  throw Error("template not registered: " + std::string(to_string(id)));
}

}  // namespace laybench::prompts
