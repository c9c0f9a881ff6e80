#include <atomic>
#include <cmath>
#include <fstream>

#include "support.hpp"

#include "cachexia/chat_client.hpp"
#include "cachexia/notes.hpp"

using namespace cachexia;
using nlohmann::json;

namespace {

// Replies with a fixed answer list, or with canned strings in sequence; counts calls.
class StubClient final : public ChatClient {
 public:
  explicit StubClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  static std::string answers_json(const QuestionBattery& b, const std::vector<std::string>& tokens) {
    json arr = json::array();
    for (std::size_t i = 0; i < b.size(); ++i)
      arr.push_back({{"id", b.questions[i].id},
                     {"answer", tokens[i % tokens.size()]},
                     {"reasoning", "r" + std::to_string(i)},
                     {"reference", "ref" + std::to_string(i)}});
    return arr.dump();
  }

  std::string complete(const std::vector<ChatMessage>& messages) override {
    last_messages = messages;
    const auto i = calls++;
    return replies_[std::min<std::size_t>(i, replies_.size() - 1)];
  }
  std::string model_name() const override { return "stub"; }

  std::atomic<std::size_t> calls{0};
  std::vector<ChatMessage> last_messages;

 private:
  std::vector<std::string> replies_;
};

NotesBundle two_notes() {
  NotesBundle b;
  b.notes.push_back({NoteType::progress_note, "Patient reports severe fatigue.", "2019-01-02"});
  b.notes.push_back({NoteType::dietary_assessment, "Patient denies nausea.", std::nullopt});
  return b;
}

}  // namespace

TEST_SUITE("notes") {
  TEST_CASE("default battery") {
    const auto b = QuestionBattery::defaults();
    CHECK(b.size() == 26);
    std::set<std::string> ids;
    for (const auto& q : b.questions) ids.insert(q.id);
    CHECK(ids.size() == 26);
    CHECK(b.version() == QuestionBattery::from_json(json::parse(b.to_json().dump())).version());
  }

  TEST_CASE("prompt embeds every note and question") {
    const auto b = QuestionBattery::defaults();
    const auto p = build_prompt(two_notes(), b);
    CHECK(p.find("Patient reports severe fatigue.") != std::string::npos);
    CHECK(p.find("Patient denies nausea.") != std::string::npos);
    CHECK(p.find("dietary_assessment") != std::string::npos);
    CHECK(p.find("2019-01-02") != std::string::npos);
    for (const auto& q : b.questions) CHECK(p.find("\"" + q.id + "\"") != std::string::npos);
    CHECK(p.find("not_given") != std::string::npos);
    CHECK(build_prompt(two_notes(), b) == p);
    CHECK_ERRC(build_prompt(two_notes(), QuestionBattery{}), Errc::EmptyBattery);
  }

  TEST_CASE("valid reply parses into one answer per question") {
    const auto b = QuestionBattery::defaults();
    StubClient client({StubClient::answers_json(b, {"yes", "not_given", "no"})});
    auto r = extract_answers("P1", two_notes(), b, client);
    CHECK(client.calls == 1);
    REQUIRE(r.answers.size() == 26);
    CHECK(r.answers[0].answer == Answer::yes);
    CHECK(r.answers[1].answer == Answer::not_given);
    CHECK(r.answers[2].answer == Answer::no);
    CHECK(r.answers[0].reasoning == "r0");
    CHECK(r.model_name == "stub");
    auto row = tabularize(r);
    CHECK(row[0] == 1);
    CHECK(row[1] == -1);
    CHECK(row[2] == 0);
  }

  TEST_CASE("absent bundle never calls the endpoint") {
    const auto b = QuestionBattery::defaults();
    StubClient client({"unused"});
    auto r = extract_answers("P1", std::nullopt, b, client);
    CHECK(client.calls == 0);
    REQUIRE(r.answers.size() == 26);
    for (const auto& a : r.answers) CHECK(a.answer == Answer::not_given);
    CHECK(tabularize(r) == std::vector<int>(26, -1));
    CHECK(focused_text(r).empty());
    auto empty = extract_answers("P2", NotesBundle{}, b, client);
    CHECK(client.calls == 0);
  }

  TEST_CASE("one repair round-trip, then failure") {
    const auto b = QuestionBattery::defaults();
    StubClient twice({"not json", "still not json"});
    CHECK_ERRC(extract_answers("P1", two_notes(), b, twice), Errc::UnparseableAfterRetry);
    CHECK(twice.calls == 2);
    // The retry carries the parse error back to the model.
    CHECK(twice.last_messages.size() == 4);

    StubClient repaired({"oops", StubClient::answers_json(b, {"no"})});
    auto r = extract_answers("P1", two_notes(), b, repaired);
    CHECK(repaired.calls == 2);
    CHECK(r.answers[5].answer == Answer::no);
  }

  TEST_CASE("missing ids become not_given") {
    const auto b = QuestionBattery::defaults();
    json partial = json::array({{{"id", b.questions[3].id}, {"answer", "yes"}, {"reasoning", "R"}, {"reference", "F"}}});
    StubClient client({partial.dump()});
    auto r = extract_answers("P1", two_notes(), b, client);
    REQUIRE(r.answers.size() == 26);
    for (std::size_t i = 0; i < 26; ++i) CHECK(r.answers[i].answer == (i == 3 ? Answer::yes : Answer::not_given));
    CHECK(focused_text(r) == "R F");
  }

  TEST_CASE("answer tokens") {
    CHECK(parse_answer("YES") == Answer::yes);
    CHECK(parse_answer("not-given") == Answer::not_given);
    CHECK(parse_answer("Not given") == Answer::not_given);
    CHECK_FALSE(parse_answer("maybe").has_value());
  }

  TEST_CASE("tabularize mapping") {
    ExtractionResult r;
    r.answers = {{"a", Answer::yes, "", ""}, {"b", Answer::not_given, "", ""}, {"c", Answer::no, "", ""}};
    CHECK(tabularize(r) == std::vector<int>{1, -1, 0});
  }

  TEST_CASE("focused text joins reasoning then reference") {
    ExtractionResult r;
    r.answers = {{"a", Answer::yes, "R1", "F1"}, {"b", Answer::not_given, "", ""}, {"c", Answer::no, "R3", ""}};
    CHECK(focused_text(r) == "R1 F1\nR3");
    CHECK(focused_text(r) == focused_text(r));
  }

  TEST_CASE("scoring reproduces the audit percentages") {
    CHECK(score_percent(24.6, 26) == 94.62);
    CHECK(score_percent(23, 26) == 88.46);
    CHECK(score_percent(21.2, 26) == 81.54);
    for (int s = 0; s <= 26; ++s) CHECK(score_percent(s, 26) == std::round(100.0 * s / 26.0 * 100.0) / 100.0);

    std::vector<Answer> gold(26, Answer::yes);
    auto perfect = score_against_gold(gold, gold);
    CHECK(perfect.score == 26);
    CHECK(perfect.percent == 100.0);
    std::vector<Answer> pred = gold;
    pred[0] = pred[1] = pred[2] = Answer::no;
    CHECK(score_against_gold(pred, gold).score == 23);
    CHECK(score_against_gold(pred, gold).percent == 88.46);
    std::vector<Answer> short_list(25, Answer::yes);
    CHECK_ERRC(score_against_gold(short_list, gold), Errc::LengthMismatch);
  }

  TEST_CASE("keyword extractor reads affirmations and negations") {
    const auto b = QuestionBattery::defaults();
    KeywordChatClient client(b);
    NotesBundle bundle;
    bundle.notes.push_back(
        {NoteType::progress_note, "Patient reports severe fatigue. Patient denies nausea.", std::nullopt});
    auto r = extract_answers("P1", bundle, b, client);
    std::map<std::string, Answer> by_id;
    for (const auto& a : r.answers) by_id[a.question_id] = a.answer;
    CHECK(by_id.at("fatigue") == Answer::yes);
    CHECK(by_id.at("nausea") == Answer::no);
    CHECK(by_id.at("edema") == Answer::not_given);
    for (const auto& a : r.answers)
      if (a.question_id == "fatigue") CHECK(a.reference.find("severe fatigue") != std::string::npos);
  }

  TEST_CASE("note order does not change answer order") {
    const auto b = QuestionBattery::defaults();
    KeywordChatClient client(b);
    auto bundle = two_notes();
    auto forward = extract_answers("P1", bundle, b, client);
    std::reverse(bundle.notes.begin(), bundle.notes.end());
    auto reversed = extract_answers("P1", bundle, b, client);
    CHECK(tabularize(forward) == tabularize(reversed));
  }

  TEST_CASE("cohort extraction is keyed and bounded") {
    const auto b = QuestionBattery::defaults();
    StubClient client({StubClient::answers_json(b, {"yes"})});
    Cohort cohort(6);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      cohort[i].patient_id = "P" + std::to_string(i);
      if (i % 2 == 0) cohort[i].notes = two_notes();
    }
    auto results = extract_cohort(cohort, b, client, 3);
    REQUIRE(results.size() == 6);
    CHECK(client.calls == 3);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(results[i].patient_id == cohort[i].patient_id);
      CHECK(results[i].answers[0].answer == (i % 2 == 0 ? Answer::yes : Answer::not_given));
    }
  }

  TEST_CASE("extraction files round-trip") {
    test::TempDir dir("notes");
    const auto b = QuestionBattery::defaults();
    StubClient client({StubClient::answers_json(b, {"yes", "no", "not_given"})});
    std::vector<ExtractionResult> rs{extract_answers("A", two_notes(), b, client),
                                     extract_answers("B", std::nullopt, b, client)};
    save_extractions(rs, dir / "x.jsonl");
    CHECK(load_extractions(dir / "x.jsonl") == rs);

    std::ofstream(dir / "gold.json") << R"({"A": ["yes", "no", "not_given"]})";
    auto gold = load_gold_answers(dir / "gold.json");
    CHECK(gold.at("A") == std::vector<Answer>{Answer::yes, Answer::no, Answer::not_given});
  }

  TEST_CASE("chat response shapes") {
    CHECK(chat_response_text(R"({"message": {"role": "assistant", "content": "hi"}})") == "hi");
    CHECK(chat_response_text(R"({"choices": [{"message": {"content": "yo"}}]})") == "yo");
    CHECK(chat_response_text(R"({"text": "t"})") == "t");
  }
}
