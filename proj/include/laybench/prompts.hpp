#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Registry of the four prompt templates. Bodies are plain text with named
// slots written as {Abstract}, {Article} or {Summary}; each declared slot
// appears exactly once.
namespace laybench::prompts {

enum class TemplateId { kExplain, kZeroShotLs, kRater, kScorePrefix };

inline constexpr std::array kAllTemplates = {TemplateId::kExplain, TemplateId::kZeroShotLs, TemplateId::kRater,
                                             TemplateId::kScorePrefix};

// Asset/file stem: "explain", "zero_shot_ls", "rater", "score_prefix".
std::string_view to_string(TemplateId id);

using Bindings = std::map<std::string, std::string>;

class PromptTemplate {
 public:
  // Throws ValidationError unless `body` contains every slot in `slots`
  // exactly once and no other known slot.
  PromptTemplate(TemplateId id, std::string body, std::vector<std::string> slots);

  TemplateId id() const { return id_; }
  const std::string& body() const { return body_; }
  const std::vector<std::string>& slots() const { return slots_; }

  // Bindings must name exactly this template's slots.
  std::string render(const Bindings& bindings) const;

  // Text that precedes `open_slot`, with the other slots (which must all
  // occur before it) substituted. Used to build a scoring prefix whose
  // continuation fills the open slot.
  std::string render_prefix(const Bindings& bindings, const std::string& open_slot) const;

  // Body with every slot marker deleted.
  std::string excise_slots() const;

 private:
  struct Piece {
    bool is_slot;
    std::string text;  // literal text or slot name
  };

  TemplateId id_;
  std::string body_;
  std::vector<std::string> slots_;
  std::vector<Piece> pieces_;
};

class PromptRegistry {
 public:
  // Templates compiled in from the shipped assets.
  static const PromptRegistry& builtin();

  // Builtin templates, with any `<stem>.txt` in `directory` replacing the
  // corresponding one. The version string records which were overridden.
  static PromptRegistry with_overrides(const std::filesystem::path& directory);

  const PromptTemplate& get(TemplateId id) const;
  std::string render(TemplateId id, const Bindings& bindings) const { return get(id).render(bindings); }
  const std::string& version() const { return version_; }

 private:
  PromptRegistry(std::vector<PromptTemplate> templates, std::string version);

  std::vector<PromptTemplate> templates_;
  std::string version_;
};

std::vector<std::string> declared_slots(TemplateId id);

}  // namespace laybench::prompts
