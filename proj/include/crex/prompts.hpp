#pragma once

// Prompt construction for rationale generation and the zero-shot baseline,
// plus the shared question rendering used as model input everywhere.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crex/core.hpp"
#include "crex/util.hpp"

namespace crex {

// Every rationale must close with this exact sentence prefix; the answer is
// parsed from whatever follows it.
inline constexpr std::string_view kAnswerSentinel = "Therefore, the answer is:";

// The canonical question text x for an instance. This single rendering feeds
// prompt construction, the three training task formats, feature extraction
// and evaluation.
inline std::string render_question(const RelationInstance& inst) {
  return "Given the subject entity \"" + inst.head.text + "\" and object entity \"" +
         inst.tail.text + "\", what is the relation type between them in sentence: " +
         inst.text + "?";
}

enum class PromptKind { plain_rationale, contrastive_rationale, zero_shot_classify };

struct PromptTemplate {
  PromptKind kind = PromptKind::plain_rationale;
  std::string template_text;  // named slots in braces: {text} {head} {tail} ...
};

namespace detail {
inline const std::vector<std::string>& known_slots() {
  static const std::vector<std::string> slots = {"{text}",  "{head}",
                                                 "{tail}",  "{relation}",
                                                 "{analogous_relations}", "{label_menu}"};
  return slots;
}
}  // namespace detail

// Substitutes every occurrence of each provided slot, then rejects any known
// slot marker left unfilled.
inline std::string render_template(const PromptTemplate& tpl,
                                   const std::map<std::string, std::string>& slots) {
  std::string out = tpl.template_text;
  for (const auto& [name, value] : slots) {
    const std::string marker = "{" + name + "}";
    std::size_t pos = 0;
    while ((pos = out.find(marker, pos)) != std::string::npos) {
      out.replace(pos, marker.size(), value);
      pos += value.size();
    }
  }
  for (const auto& marker : detail::known_slots()) {
    if (out.find(marker) != std::string::npos)
      throw Error("unfilled prompt slot " + marker);
  }
  return out;
}

inline PromptTemplate default_plain_template() {
  return {PromptKind::plain_rationale,
          "Given the subject entity \"{head}\" and object entity \"{tail}\", what is the "
          "relation type between them in sentence: {text}?\n"
          "The relation type between \"{head}\" and \"{tail}\" is \"{relation}\". Explain in "
          "two or three sentences why the subject entity and the object entity have this "
          "relation, reasoning over the sentence. End your explanation with the exact "
          "sentence: \"Therefore, the answer is: {relation}.\""};
}

inline PromptTemplate default_contrastive_template() {
  return {PromptKind::contrastive_rationale,
          "Given the subject entity \"{head}\" and object entity \"{tail}\", what is the "
          "relation type between them in sentence: {text}?\n"
          "The correct relation type is \"{relation}\". It is easily confused with these "
          "similar relation types: {analogous_relations}. Explain why the relation here is "
          "\"{relation}\" and not any of the similar relation types, highlighting the "
          "distinctions between the similar relations. End your explanation with the exact "
          "sentence: \"Therefore, the answer is: {relation}.\""};
}

inline PromptTemplate default_zero_shot_template() {
  return {PromptKind::zero_shot_classify,
          "Given the subject entity \"{head}\" and object entity \"{tail}\", what is the "
          "relation type between them in sentence: {text}?\n"
          "Select the one best answer from the following relation types: {label_menu}.\n"
          "Answer with the relation type only."};
}

namespace detail {
inline void require_instance_slots(const RelationInstance& inst) {
  if (trim(inst.text).empty()) throw ValidationError("empty text slot");
  if (trim(inst.head.text).empty()) throw ValidationError("empty head slot");
  if (trim(inst.tail.text).empty()) throw ValidationError("empty tail slot");
}

inline std::string quoted_list(const std::vector<std::string>& items) {
  std::vector<std::string> quoted;
  quoted.reserve(items.size());
  for (const auto& s : items) quoted.push_back("\"" + s + "\"");
  return join(quoted, ", ");
}
}  // namespace detail

// Prompt asking why `verbalization` holds for the instance. `verbalization`
// must be the label-space rendering of the instance's gold relation.
inline std::string build_plain_prompt(const RelationInstance& inst,
                                      const std::string& verbalization,
                                      const PromptTemplate& tpl = default_plain_template()) {
  detail::require_instance_slots(inst);
  if (normalize_answer(verbalization) != verbalize_label(inst.relation))
    throw Error("verbalization '" + verbalization + "' does not match relation '" +
                inst.relation + "'");
  return render_template(tpl, {{"text", inst.text},
                               {"head", inst.head.text},
                               {"tail", inst.tail.text},
                               {"relation", verbalization}});
}

// Prompt asking for an explanation that distinguishes the gold relation from
// its analogous peers. `analogous` holds peer verbalizations and must be
// nonempty; callers skip isolated relations.
inline std::string build_contrastive_prompt(
    const RelationInstance& inst, const std::string& gold_verbalization,
    const std::vector<std::string>& analogous,
    const PromptTemplate& tpl = default_contrastive_template()) {
  detail::require_instance_slots(inst);
  if (analogous.empty())
    throw Error("contrastive prompt for " + inst.id + " requires a nonempty analogous set");
  for (const auto& verb : analogous) {
    if (verb == gold_verbalization)
      throw Error("gold verbalization '" + gold_verbalization + "' listed as analogous");
  }
  if (normalize_answer(gold_verbalization) != verbalize_label(inst.relation))
    throw Error("verbalization '" + gold_verbalization + "' does not match relation '" +
                inst.relation + "'");
  return render_template(tpl, {{"text", inst.text},
                               {"head", inst.head.text},
                               {"tail", inst.tail.text},
                               {"relation", gold_verbalization},
                               {"analogous_relations", detail::quoted_list(analogous)}});
}

// Zero-shot classification prompt listing the whole label menu.
inline std::string build_zero_shot_prompt(
    const RelationInstance& inst, const std::vector<std::string>& label_menu,
    const PromptTemplate& tpl = default_zero_shot_template()) {
  detail::require_instance_slots(inst);
  if (label_menu.empty()) throw Error("zero-shot prompt requires a nonempty label menu");
  return render_template(tpl, {{"text", inst.text},
                               {"head", inst.head.text},
                               {"tail", inst.tail.text},
                               {"label_menu", detail::quoted_list(label_menu)}});
}

inline std::string prompt_digest(std::string_view prompt) { return hex64(fnv1a64(prompt)); }

// Splits a completion at the last answer sentinel. The body before the
// sentinel becomes the rationale text; the remainder, minus trailing
// punctuation, is the concluded answer. Empty optional when no sentinel or
// no answer is present.
struct ParsedCompletion {
  std::string rationale;
  std::string answer;
};

inline std::optional<ParsedCompletion> parse_completion(std::string_view raw) {
  std::size_t pos = raw.rfind(kAnswerSentinel);
  if (pos == std::string_view::npos) return std::nullopt;
  ParsedCompletion out;
  out.rationale = trim(raw.substr(0, pos));
  std::string answer = trim(raw.substr(pos + kAnswerSentinel.size()));
  while (!answer.empty() && (answer.back() == '.' || answer.back() == '"')) answer.pop_back();
  while (!answer.empty() && answer.front() == '"') answer.erase(answer.begin());
  out.answer = trim(answer);
  if (out.answer.empty()) return std::nullopt;
  return out;
}

}  // namespace crex
