#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>

#include "aot/errors.hpp"

namespace aot {

// The instruction templates sent to the verifier/proposer MLLM and the
// generator. They ship as plain text files so prompt edits never require a
// rebuild; the compiled-in defaults below make the binary self-contained.
namespace default_prompts {

inline constexpr const char* kOutpaint = R"(You are an expert prompt engineer for advanced AI image generation models. You will be given a partial image on a white canvas. Your mission is to write a single, richly detailed, and factual English prompt to outpaint the surrounding area, creating a complete, coherent, and visually interesting scene.

CRITICAL INSTRUCTION
The visible photograph already contains: **{exclusion_list}**.
**DO NOT mention these objects in your output prompt.** Your goal is to describe the environment *around* them.

PROMPT STYLE & CONTENT GUIDELINES
1. Maximize Detail (Token Budget): Your output prompt should be dense with information, aiming to utilize a budget of **around 77 tokens**. Do not be brief; your goal is to describe a full scene.
2. Describe a Complete Environment: Instead of just one or two items, describe a whole setting. **Add more distinct objects and environmental details.** Think about what would be in the foreground, mid-ground, and background. What's on the walls? What's on the floor? Is there a view outside a window?
3. Prioritize Nouns over Adjectives: Build the scene with a variety of concrete objects, structures, and scenery (e.g., 'a mahogany desk, a leather armchair, a large bay window overlooking a city skyline, bookshelves filled with books, a patterned rug on a hardwood floor'). This is more effective than using many adjectives on few items.
4. Strict Comma-Separated Format: Continue to structure your output as a series of descriptive phrases separated by commas.
5. Factual & Unambiguous: Describe *what is there*, not *how it feels*. Avoid abstract or emotional terms like 'cozy', 'beautiful', or 'serene'.
)";

inline constexpr const char* kComposition = R"(Your task is to identify if this image is a *simple stitched collage*. A simple stitched collage is strictly defined as two or more completely separate and unrelated photographs joined together at their edges to fill the canvas (e.g., side-by-side, top-and-bottom grids). The key characteristic is the lack of a single, unifying 'host' scene.

CRITICAL RULE: If the image depicts a single, continuous 'host' scene that itself *contains* another image or view, it is **NOT** a simple stitched collage. Examples of a valid single scene include: - A room with a picture frame on the wall. - A view through a window or a reflection in a mirror. - An artistic frame-within-a-frame or photo-in-photo composition. - A scene with a minor visual artifact, like a thin line, that doesn't break it into two distinct, unrelated environments.

Based on this strict definition, is this a simple stitched collage? Your answer MUST begin with 'Yes' or 'No'.
)";

inline constexpr const char* kDuplication = R"(You are a highly precise visual detection expert. Your primary goal is to avoid false positives. Your task is to identify and provide bounding boxes for *only* the instances of the object '{object_name}' in the image.

CRITICAL RULES:
1. Strict Identification: Be extremely strict. If an object is merely *similar* to a '{object_name}' but is technically a different category (e.g., a 'truck' is NOT a 'car'; a 'sofa' is NOT a 'chair'), you MUST NOT include it.
2. Full Definition: Pay close attention to the complete term. For example, a 'potted plant' must be a plant physically situated *inside a pot*. A plant hanging on a wall or growing in the ground is not a 'potted plant'.
3. High Confidence Only: If you are not absolutely certain that an object perfectly matches the description, DO NOT return a bounding box for it. It is better to return an empty list than an incorrect box.

Respond with a JSON object containing a single key detections. The value should be a list of bounding boxes. Each item in the list must be a dictionary with a box key, and the value should be a list of four integers: [x, y, width, height]. If no objects are found, return an empty list: {"detections": []}.
)";

inline constexpr const char* kRealism = R"(You are a meticulous digital image forensics expert. Your task is to determine if the image is a real-world photograph or a synthetic (AI-generated) image.

CRITICAL CONSERVATIVE RULE: Your primary directive is to be conservative. You should only classify an image as 'AI-Generated' if you find clear, undeniable evidence of digital artifacts commonly associated with AI image synthesis. If there is any ambiguity, you MUST default to classifying it as a 'Real Photo'.

Look for these specific, unambiguous artifacts:
1. Anatomical Errors: Malformed hands with incorrect numbers of fingers, distorted limbs, unnatural body poses.
2. Text and Symbol Corruption: Garbled, nonsensical, or partially formed text and symbols.
3. Logical Inconsistencies: Objects blending or melting into each other unnaturally, impossible physics, inconsistent lighting or shadows that are physically impossible.
4. Unnatural Textures: Surfaces that look overly smooth, plastic-like, or have a characteristic waxy AI sheen.

RESPONSE FORMAT:
- Your response MUST begin with either 'Real Photo' or 'AI-Generated'.
- If you classify it as 'AI-Generated', you MUST provide a brief, one-sentence explanation after a colon. Example: 'AI-Generated: The text on the sign is garbled and unreadable.'

Analyze the image and provide your verdict based on these strict, conservative criteria.
)";

inline constexpr const char* kProposal = R"(Add a plausible distractor object, inspired by the question, to mislead a model answering: {question}.

The object's description must not contain key nouns from the question. Your bounding box [x1, y1, x2, y2] must not obscure evidence for the correct answer.

Respond in a single line: [x1, y1, x2, y2] | A short English description.
)";

inline constexpr const char* kAttack = R"(Edit the image to introduce a misleading visual element for a model answering: {question}.

Do not alter or obscure the objects the question relies on; change only the editable region.
)";

inline constexpr const char* kVqa = R"(Look at the image and answer the multiple-choice question.

Question: {question}
Options:
{options}

Answer with the letter of the correct option. End your response with \boxed{LETTER}.
)";

}  // namespace default_prompts

struct PromptSet {
  std::string outpaint = default_prompts::kOutpaint;
  std::string composition = default_prompts::kComposition;
  std::string duplication = default_prompts::kDuplication;
  std::string realism = default_prompts::kRealism;
  std::string proposal = default_prompts::kProposal;
  std::string attack = default_prompts::kAttack;
  std::string vqa = default_prompts::kVqa;
};

namespace prompt_detail {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read prompt template: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void require_placeholder(const std::string& tmpl,
                                std::string_view placeholder,
                                std::string_view which) {
  if (tmpl.find(placeholder) == std::string::npos)
    throw ConfigError(std::string(which) + " template is missing the " +
                      std::string(placeholder) + " placeholder");
}

inline std::string substitute(std::string tmpl, std::string_view placeholder,
                              std::string_view value) {
  for (auto pos = tmpl.find(placeholder); pos != std::string::npos;
       pos = tmpl.find(placeholder, pos + value.size()))
    tmpl.replace(pos, placeholder.size(), value);
  return tmpl;
}

}  // namespace prompt_detail

// Startup validation: every template must contain the placeholders its
// builder substitutes.
inline void validate_prompts(const PromptSet& prompts) {
  using prompt_detail::require_placeholder;
  require_placeholder(prompts.outpaint, "{exclusion_list}", "outpaint");
  require_placeholder(prompts.duplication, "{object_name}", "duplication");
  require_placeholder(prompts.proposal, "{question}", "proposal");
  require_placeholder(prompts.attack, "{question}", "attack");
  require_placeholder(prompts.vqa, "{question}", "vqa");
  require_placeholder(prompts.vqa, "{options}", "vqa");
}

// The exclusion list lands as one bolded comma-joined span. An empty list is
// a configuration error: every sample has target instances.
inline std::string build_outpaint_prompt(const std::string& tmpl,
                                         std::span<const std::string> exclusion) {
  prompt_detail::require_placeholder(tmpl, "{exclusion_list}", "outpaint");
  if (exclusion.empty())
    throw ConfigError("outpaint prompt built with an empty exclusion list");
  std::string joined;
  for (std::size_t i = 0; i < exclusion.size(); ++i) {
    if (i) joined += ", ";
    joined += exclusion[i];
  }
  return prompt_detail::substitute(tmpl, "{exclusion_list}", joined);
}

inline std::string build_duplication_prompt(const std::string& tmpl,
                                            const std::string& object_name) {
  return prompt_detail::substitute(tmpl, "{object_name}", object_name);
}

inline std::string build_proposal_prompt(const std::string& tmpl,
                                         const std::string& question) {
  return prompt_detail::substitute(tmpl, "{question}", question);
}

inline std::string build_vqa_prompt(const std::string& tmpl,
                                    const std::string& question,
                                    const std::map<char, std::string>& options) {
  std::string block;
  for (const auto& [letter, text] : options) {
    block += letter;
    block += ". ";
    block += text;
    block += '\n';
  }
  if (!block.empty()) block.pop_back();
  std::string out = prompt_detail::substitute(tmpl, "{question}", question);
  return prompt_detail::substitute(out, "{options}", block);
}

}  // namespace aot
