#pragma once

#include <string>

#include "cachexia/notes.hpp"

namespace cachexia {

struct ChatClientConfig {
  std::string base_url = "http://127.0.0.1:11434";
  std::string path = "/api/chat";
  std::string model = "deepseek-r1:70b";
  double timeout_s = 120.0;
  double temperature = 0.0;
};

/// JSON-over-HTTP chat completion. Request: {model, messages, temperature, stream:false}.
/// The reply text is read from `text`, `message.content`, or `choices[0].message.content`.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(ChatClientConfig cfg);

  std::string complete(const std::vector<ChatMessage>& messages) override;
  std::string model_name() const override { return cfg_.model; }

 private:
  ChatClientConfig cfg_;
};

/// Offline extractor answering from keyword matches in the prompt's notes. A sentence that
/// mentions a question keyword answers yes, or no when a negation cue precedes the keyword;
/// the sentence itself is returned as the verbatim reference.
class KeywordChatClient final : public ChatClient {
 public:
  explicit KeywordChatClient(QuestionBattery battery);

  std::string complete(const std::vector<ChatMessage>& messages) override;
  std::string model_name() const override { return "keyword-extractor"; }

 private:
  QuestionBattery battery_;
};

/// Extracts the reply text from a chat-completion response body.
std::string chat_response_text(const std::string& body);

}  // namespace cachexia
