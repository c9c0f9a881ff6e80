#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cachexia/cohort.hpp"

namespace cachexia {

struct Question {
  std::string id;
  std::string text;
  /// Phrases the offline keyword extractor looks for; ignored by model endpoints.
  std::vector<std::string> keywords;
};

/// Ordered question set asked of every patient's notes.
struct QuestionBattery {
  std::vector<Question> questions;

  std::size_t size() const { return questions.size(); }
  bool empty() const { return questions.empty(); }
  /// Content hash over ids and texts.
  std::string version() const;

  /// 26 cachexia-indicator questions shipped with the tool; replace via a battery file.
  static QuestionBattery defaults();
  static QuestionBattery from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

QuestionBattery load_battery(const std::filesystem::path& path);

enum class Answer { yes, no, not_given };

std::string_view to_string(Answer a);
/// Accepts yes/no/not_given and the spellings "not-given" and "not given", case-insensitive.
std::optional<Answer> parse_answer(std::string_view s);

struct QuestionAnswer {
  std::string question_id;
  Answer answer = Answer::not_given;
  std::string reasoning;
  std::string reference;

  bool operator==(const QuestionAnswer&) const = default;
};

struct ExtractionResult {
  std::string patient_id;
  std::vector<QuestionAnswer> answers;  // battery order
  std::string model_name;
  std::string raw_response;

  bool operator==(const ExtractionResult&) const = default;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Chat-completion backend. Implementations must tolerate concurrent calls.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
  virtual std::string model_name() const = 0;
};

inline constexpr std::string_view kNotesMarker = "NOTES (JSON):";
inline constexpr std::string_view kQuestionsMarker = "QUESTIONS (JSON):";

/// Deterministic prompt embedding every note (typed, dated) and every question. Throws EmptyBattery.
std::string build_prompt(const NotesBundle& bundle, const QuestionBattery& battery);

/// Asks the model once, re-prompts once with the parse error on malformed output,
/// then throws UnparseableAfterRetry. An absent or empty bundle never calls the client.
ExtractionResult extract_answers(const std::string& patient_id, const std::optional<NotesBundle>& bundle,
                                 const QuestionBattery& battery, ChatClient& client);

/// Runs extraction for every record with at most `max_inflight` concurrent calls; output in cohort order.
std::vector<ExtractionResult> extract_cohort(const Cohort& cohort, const QuestionBattery& battery, ChatClient& client,
                                             std::size_t max_inflight = 4);

/// yes -> 1, no -> 0, not_given -> -1, battery order.
std::vector<int> tabularize(const ExtractionResult& result);

/// Reasoning then reference per question, one question per line; empty entries skipped.
std::string focused_text(const ExtractionResult& result);

struct ExtractionScore {
  double score = 0.0;
  double percent = 0.0;
};

/// 100 * score / n rounded to two decimals.
double score_percent(double score, std::size_t n);

/// Exact-match count against a human-authored answer key. Throws LengthMismatch.
ExtractionScore score_against_gold(std::span<const Answer> answers, std::span<const Answer> gold);

std::vector<Answer> answers_of(const ExtractionResult& result);

nlohmann::ordered_json extraction_to_json(const ExtractionResult& r);
ExtractionResult extraction_from_json(const nlohmann::json& j);
void save_extractions(const std::vector<ExtractionResult>& results, const std::filesystem::path& path);
std::vector<ExtractionResult> load_extractions(const std::filesystem::path& path);

/// Gold file: {"patient_id": ["yes", "no", "not_given", ...], ...}.
std::map<std::string, std::vector<Answer>> load_gold_answers(const std::filesystem::path& path);

}  // namespace cachexia
