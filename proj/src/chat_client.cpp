#include "cachexia/chat_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>

#include "cachexia/error.hpp"

namespace cachexia {

using json = nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?' || c == '\n') {
      auto b = cur.find_first_not_of(" \t\n");
      if (b != std::string::npos) {
        auto e = cur.find_last_not_of(" \t\n");
        out.push_back(cur.substr(b, e - b + 1));
      }
      cur.clear();
    }
  }
  auto b = cur.find_first_not_of(" \t\n");
  if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(" \t\n") - b + 1));
  return out;
}

constexpr std::string_view kNegationCues[] = {"denies", "no ", "without", "negative for", "not ", "absence of"};

}  // namespace

std::string chat_response_text(const std::string& body) {
  json j = json::parse(body);
  if (auto it = j.find("text"); it != j.end() && it->is_string()) return it->get<std::string>();
  if (auto it = j.find("message"); it != j.end() && it->is_object()) return it->at("content").get<std::string>();
  if (auto it = j.find("choices"); it != j.end() && it->is_array() && !it->empty()) {
    const auto& c = it->front();
    if (c.contains("message")) return c.at("message").at("content").get<std::string>();
    if (c.contains("text")) return c.at("text").get<std::string>();
  }
  throw std::runtime_error("response has no text field");
}

HttpChatClient::HttpChatClient(ChatClientConfig cfg) : cfg_(std::move(cfg)) {}

std::string HttpChatClient::complete(const std::vector<ChatMessage>& messages) {
  httplib::Client cli(cfg_.base_url);
  auto secs = static_cast<time_t>(cfg_.timeout_s);
  auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  json body;
  body["model"] = cfg_.model;
  body["temperature"] = cfg_.temperature;
  body["options"] = {{"temperature", cfg_.temperature}};
  body["stream"] = false;
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  auto res = cli.Post(cfg_.path, body.dump(), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
      throw Error(Errc::Timeout, "no reply within " + std::to_string(cfg_.timeout_s) + " s from " + cfg_.base_url);
    throw Error(Errc::EndpointUnreachable, cfg_.base_url + ": " + httplib::to_string(err));
  }
  if (res->status != 200)
    throw Error(Errc::EndpointUnreachable, cfg_.base_url + " returned HTTP " + std::to_string(res->status));
  try {
    return chat_response_text(res->body);
  } catch (const std::exception&) {
    // Let the caller's retry path see the raw body.
    return res->body;
  }
}

KeywordChatClient::KeywordChatClient(QuestionBattery battery) : battery_(std::move(battery)) {}

std::string KeywordChatClient::complete(const std::vector<ChatMessage>& messages) {
  std::vector<std::string> sentences;
  for (const auto& m : messages) {
    if (m.role != "user") continue;
    auto pos = m.content.find(kNotesMarker);
    if (pos == std::string::npos) continue;
    auto start = m.content.find('\n', pos);
    auto end = m.content.find('\n', start + 1);
    json notes = json::parse(m.content.substr(start + 1, end - start - 1));
    for (const auto& n : notes.at("notes")) {
      auto s = split_sentences(n.at("text").get<std::string>());
      sentences.insert(sentences.end(), s.begin(), s.end());
    }
    break;
  }
  // Smallest matching sentence wins so the answer is independent of note order.
  std::sort(sentences.begin(), sentences.end());

  json out = json::array();
  for (const auto& q : battery_.questions) {
    json entry{{"id", q.id}, {"answer", "not_given"}, {"reasoning", ""}, {"reference", ""}};
    for (const auto& s : sentences) {
      auto ls = lower(s);
      for (const auto& kw : q.keywords) {
        auto lkw = lower(kw);
        auto at = ls.find(lkw);
        if (at == std::string::npos) continue;
        bool negated = false;
        for (auto cue : kNegationCues) {
          auto c = ls.find(cue);
          if (c != std::string::npos && c < at) negated = true;
        }
        entry["answer"] = negated ? "no" : "yes";
        entry["reasoning"] = negated ? "The notes indicate no " + kw + "." : "The notes describe " + kw + ".";
        entry["reference"] = s;
        break;
      }
      if (entry["answer"] != "not_given") break;
    }
    out.push_back(std::move(entry));
  }
  return out.dump();
}

}  // namespace cachexia
