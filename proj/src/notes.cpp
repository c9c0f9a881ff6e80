#include "cachexia/notes.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct DefaultQuestion {
  const char* id;
  const char* text;
  const char* keyword;
};

// Indicators commonly documented around cachexia work-up: weight history, muscle and
// performance status, anemia, gastrointestinal symptoms, intake, and psychiatric conditions.
constexpr DefaultQuestion kDefaultQuestions[] = {
    {"unintentional_weight_loss", "Do the notes document unintentional weight loss?", "unintentional weight loss"},
    {"weight_history_decline", "Is there a history of weight decline before diagnosis?", "weight decline"},
    {"postoperative_weight_change", "Is weight loss attributed to recent surgery?", "postoperative weight change"},
    {"muscle_wasting", "Is muscle loss or muscle wasting described?", "muscle wasting"},
    {"reduced_performance_status", "Is reduced performance status documented?", "reduced performance status"},
    {"fatigue", "Does the patient report fatigue?", "fatigue"},
    {"anemia", "Is anemia documented?", "anemia"},
    {"early_satiety", "Does the patient report early satiety or fullness?", "early satiety"},
    {"nausea", "Does the patient report nausea?", "nausea"},
    {"vomiting", "Does the patient report vomiting?", "vomiting"},
    {"anorexia", "Is anorexia documented?", "anorexia"},
    {"poor_appetite", "Does the patient report poor appetite?", "poor appetite"},
    {"diarrhea", "Does the patient report diarrhea?", "diarrhea"},
    {"depression", "Is depression documented?", "depression"},
    {"anxiety", "Is anxiety documented?", "anxiety"},
    {"dysphagia", "Does the patient report difficulty swallowing?", "dysphagia"},
    {"abdominal_pain", "Does the patient report abdominal pain?", "abdominal pain"},
    {"reduced_oral_intake", "Is reduced oral intake documented?", "reduced oral intake"},
    {"nutritional_supplements", "Is the patient taking nutritional supplements?", "nutritional supplements"},
    {"dietitian_referral", "Was the patient referred to a dietitian?", "dietitian referral"},
    {"malabsorption", "Is malabsorption documented?", "malabsorption"},
    {"steatorrhea", "Is steatorrhea documented?", "steatorrhea"},
    {"edema", "Is edema documented?", "edema"},
    {"generalized_weakness", "Does the patient report generalized weakness?", "generalized weakness"},
    {"taste_changes", "Does the patient report taste changes?", "taste changes"},
    {"constipation", "Does the patient report constipation?", "constipation"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Models often wrap the array in prose, code fences, or reasoning tags.
json parse_answer_array(const std::string& text) {
  auto begin = text.find('[');
  auto end = text.rfind(']');
  if (begin == std::string::npos || end == std::string::npos || end < begin)
    throw std::runtime_error("no JSON array found in response");
  json arr = json::parse(text.substr(begin, end - begin + 1));
  if (!arr.is_array()) throw std::runtime_error("response is not a JSON array");
  return arr;
}

std::vector<QuestionAnswer> parse_answers(const std::string& text, const QuestionBattery& battery,
                                          const std::string& patient_id) {
  json arr = parse_answer_array(text);
  std::unordered_map<std::string, QuestionAnswer> by_id;
  for (const auto& item : arr) {
    if (!item.is_object()) throw std::runtime_error("array entry is not an object");
    QuestionAnswer qa;
    qa.question_id = item.at("id").get<std::string>();
    auto answer = parse_answer(item.at("answer").get<std::string>());
    if (!answer) throw std::runtime_error("invalid answer token for " + qa.question_id);
    qa.answer = *answer;
    if (auto it = item.find("reasoning"); it != item.end() && it->is_string()) qa.reasoning = it->get<std::string>();
    if (auto it = item.find("reference"); it != item.end() && it->is_string()) qa.reference = it->get<std::string>();
    by_id.emplace(qa.question_id, std::move(qa));
  }
  std::vector<QuestionAnswer> out;
  out.reserve(battery.size());
  for (const auto& q : battery.questions) {
    auto it = by_id.find(q.id);
    if (it == by_id.end()) {
      spdlog::warn("{}: no answer for question '{}', recording not_given", patient_id, q.id);
      out.push_back(QuestionAnswer{q.id, Answer::not_given, "", ""});
    } else {
      out.push_back(std::move(it->second));
    }
  }
  return out;
}

}  // namespace

std::string QuestionBattery::version() const {
  std::string buf;
  for (const auto& q : questions) {
    buf += q.id;
    buf.push_back('\x1f');
    buf += q.text;
    buf.push_back('\x1e');
  }
  return sha256_hex(buf).substr(0, 16);
}

QuestionBattery QuestionBattery::defaults() {
  QuestionBattery b;
  for (const auto& q : kDefaultQuestions) b.questions.push_back(Question{q.id, q.text, {q.keyword}});
  return b;
}

QuestionBattery QuestionBattery::from_json(const json& j) {
  QuestionBattery b;
  const json& qs = j.is_array() ? j : j.at("questions");
  std::unordered_set<std::string> ids;
  for (const auto& qj : qs) {
    Question q;
    q.id = qj.at("id").get<std::string>();
    q.text = qj.at("text").get<std::string>();
    q.keywords = qj.value("keywords", std::vector<std::string>{});
    if (!ids.insert(q.id).second) throw Error(Errc::InvalidConfig, "duplicate question id " + q.id);
    b.questions.push_back(std::move(q));
  }
  return b;
}

ordered_json QuestionBattery::to_json() const {
  ordered_json qs = ordered_json::array();
  for (const auto& q : questions) qs.push_back({{"id", q.id}, {"text", q.text}, {"keywords", q.keywords}});
  return ordered_json{{"version", version()}, {"questions", std::move(qs)}};
}

QuestionBattery load_battery(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open battery " + path.string());
  try {
    return QuestionBattery::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, "battery " + path.string() + ": " + e.what());
  }
}

std::string_view to_string(Answer a) {
  switch (a) {
    case Answer::yes: return "yes";
    case Answer::no: return "no";
    case Answer::not_given: return "not_given";
  }
  return "?";
}

std::optional<Answer> parse_answer(std::string_view s) {
  auto l = lower(s);
  if (l == "yes") return Answer::yes;
  if (l == "no") return Answer::no;
  if (l == "not_given" || l == "not-given" || l == "not given") return Answer::not_given;
  return std::nullopt;
}

std::string build_prompt(const NotesBundle& bundle, const QuestionBattery& battery) {
  if (battery.empty()) throw Error(Errc::EmptyBattery, "question battery is empty");
  ordered_json notes = ordered_json::array();
  for (const auto& n : bundle.notes) {
    ordered_json nj;
    nj["note_type"] = to_string(n.note_type);
    nj["date"] = n.date ? ordered_json(*n.date) : ordered_json(nullptr);
    nj["text"] = n.text;
    notes.push_back(std::move(nj));
  }
  ordered_json questions = ordered_json::array();
  for (const auto& q : battery.questions) questions.push_back({{"id", q.id}, {"text", q.text}});

  std::string p;
  p += "You are reviewing the clinical notes of one cancer patient to document indicators of cachexia.\n";
  p += "Answer every question using only information stated in the notes.\n";
  p += "For each question provide:\n";
  p += "- \"answer\": exactly one of \"yes\", \"no\", \"not_given\" (use not_given when the notes do not address it)\n";
  p += "- \"reasoning\": one or two sentences explaining the answer\n";
  p += "- \"reference\": a verbatim quote from the notes supporting the answer, or \"\" when not_given\n\n";
  p += kNotesMarker;
  p += "\n";
  p += ordered_json{{"notes", std::move(notes)}}.dump();
  p += "\n\n";
  p += kQuestionsMarker;
  p += "\n";
  p += questions.dump();
  p += "\n\n";
  p += "Respond with only a JSON array containing one object per question, in the order given:\n";
  p += "[{\"id\": \"<question id>\", \"answer\": \"yes|no|not_given\", \"reasoning\": \"...\", \"reference\": \"...\"}]\n";
  return p;
}

ExtractionResult extract_answers(const std::string& patient_id, const std::optional<NotesBundle>& bundle,
                                 const QuestionBattery& battery, ChatClient& client) {
  if (battery.empty()) throw Error(Errc::EmptyBattery, "question battery is empty");
  ExtractionResult result;
  result.patient_id = patient_id;
  result.model_name = client.model_name();
  if (!bundle || bundle->notes.empty()) {
    for (const auto& q : battery.questions) result.answers.push_back(QuestionAnswer{q.id, Answer::not_given, "", ""});
    return result;
  }

  std::vector<ChatMessage> messages{
      {"system", "You extract structured answers from clinical notes and reply with JSON only."},
      {"user", build_prompt(*bundle, battery)},
  };
  std::string response = client.complete(messages);
  try {
    result.answers = parse_answers(response, battery, patient_id);
    result.raw_response = std::move(response);
    return result;
  } catch (const std::exception& first) {
    spdlog::warn("{}: unparseable model output ({}), retrying once", patient_id, first.what());
    messages.push_back({"assistant", response});
    messages.push_back({"user", std::string("Your previous reply could not be parsed: ") + first.what() +
                                    ". Reply with only the JSON array described above."});
  }
  response = client.complete(messages);
  try {
    result.answers = parse_answers(response, battery, patient_id);
  } catch (const std::exception& second) {
    throw Error(Errc::UnparseableAfterRetry, patient_id + ": " + second.what());
  }
  result.raw_response = std::move(response);
  return result;
}

std::vector<ExtractionResult> extract_cohort(const Cohort& cohort, const QuestionBattery& battery, ChatClient& client,
                                             std::size_t max_inflight) {
  std::vector<ExtractionResult> results(cohort.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cohort.size(); i = next++) {
      try {
        results[i] = extract_answers(cohort[i].patient_id, cohort[i].notes, battery, client);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = cohort.size();
      }
    }
  };
  std::size_t n_threads = std::max<std::size_t>(1, std::min(max_inflight, cohort.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::vector<int> tabularize(const ExtractionResult& result) {
  std::vector<int> out;
  out.reserve(result.answers.size());
  for (const auto& qa : result.answers) {
    switch (qa.answer) {
      case Answer::yes: out.push_back(1); break;
      case Answer::no: out.push_back(0); break;
      case Answer::not_given: out.push_back(-1); break;
    }
  }
  return out;
}

std::string focused_text(const ExtractionResult& result) {
  std::string out;
  for (const auto& qa : result.answers) {
    std::string line = qa.reasoning;
    if (!qa.reference.empty()) {
      if (!line.empty()) line.push_back(' ');
      line += qa.reference;
    }
    if (line.empty()) continue;
    if (!out.empty()) out.push_back('\n');
    out += line;
  }
  return out;
}

double score_percent(double score, std::size_t n) {
  if (n == 0) return 0.0;
  return std::round(100.0 * score / static_cast<double>(n) * 100.0) / 100.0;
}

ExtractionScore score_against_gold(std::span<const Answer> answers, std::span<const Answer> gold) {
  if (answers.size() != gold.size())
    throw Error(Errc::LengthMismatch,
                "answers " + std::to_string(answers.size()) + " vs gold " + std::to_string(gold.size()));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) hits += answers[i] == gold[i];
  return ExtractionScore{static_cast<double>(hits), score_percent(static_cast<double>(hits), gold.size())};
}

std::vector<Answer> answers_of(const ExtractionResult& result) {
  std::vector<Answer> out;
  for (const auto& qa : result.answers) out.push_back(qa.answer);
  return out;
}

ordered_json extraction_to_json(const ExtractionResult& r) {
  ordered_json answers = ordered_json::array();
  for (const auto& qa : r.answers)
    answers.push_back(
        {{"id", qa.question_id}, {"answer", to_string(qa.answer)}, {"reasoning", qa.reasoning}, {"reference", qa.reference}});
  return ordered_json{{"patient_id", r.patient_id},
                      {"model_name", r.model_name},
                      {"answers", std::move(answers)},
                      {"raw_response", r.raw_response}};
}

ExtractionResult extraction_from_json(const json& j) {
  ExtractionResult r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.model_name = j.value("model_name", "");
  r.raw_response = j.value("raw_response", "");
  for (const auto& a : j.at("answers")) {
    QuestionAnswer qa;
    qa.question_id = a.at("id").get<std::string>();
    auto parsed = parse_answer(a.at("answer").get<std::string>());
    if (!parsed) throw Error(Errc::MalformedLine, "bad answer token in extraction for " + r.patient_id);
    qa.answer = *parsed;
    qa.reasoning = a.value("reasoning", "");
    qa.reference = a.value("reference", "");
    r.answers.push_back(std::move(qa));
  }
  return r;
}

void save_extractions(const std::vector<ExtractionResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  for (const auto& r : results) out << extraction_to_json(r).dump() << '\n';
}

std::vector<ExtractionResult> load_extractions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::vector<ExtractionResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(extraction_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::vector<Answer>> load_gold_answers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  json j = json::parse(in);
  std::map<std::string, std::vector<Answer>> gold;
  for (const auto& [id, tokens] : j.items()) {
    std::vector<Answer> answers;
    for (const auto& t : tokens) {
      auto a = parse_answer(t.get<std::string>());
      if (!a) throw Error(Errc::InvalidConfig, "bad gold token for " + id);
      answers.push_back(*a);
    }
    gold.emplace(id, std::move(answers));
  }
  return gold;
}

}  // namespace cachexia
