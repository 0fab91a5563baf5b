#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/backends/http.hpp"

namespace iclb {

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 4;
  int top_logprobs = 20;
};

/// Text-completion endpoint speaking POST {endpoint}/v1/completions.
class CompletionBackend : public Backend {
 public:
  struct Options {
    std::string endpoint;
    std::string model;
    ProbeMode mode = ProbeMode::logprob;
    DecodeParams decode;
    std::size_t max_in_flight = 8;
    http::RetryPolicy retry;
    std::string api_key_env = "OPENAI_API_KEY";
  };

  explicit CompletionBackend(Options o) : opts_(std::move(o)) {
    require(opts_.decode.temperature == 0.0, ErrorCode::config, "probing requires temperature 0");
  }

  BackendKind kind() const override { return BackendKind::completion; }
  ProbeMode mode() const override { return opts_.mode; }
  std::size_t max_in_flight() const override { return opts_.max_in_flight; }

  std::string identity() const override {
    return nlohmann::json{{"kind", "completion"},
                          {"endpoint", opts_.endpoint},
                          {"model", opts_.model},
                          {"temperature", opts_.decode.temperature},
                          {"max_tokens", opts_.decode.max_tokens},
                          {"top_logprobs", opts_.decode.top_logprobs},
                          {"mode", opts_.mode}}
        .dump();
  }

  std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const override {
    return render_prompt(ctx.examples, q.prompt, ctx.prompt);
  }

  nlohmann::json request_body(const std::string& prompt) const {
    nlohmann::json body{{"model", opts_.model},
                        {"prompt", prompt},
                        {"temperature", opts_.decode.temperature},
                        {"max_tokens", opts_.decode.max_tokens},
                        {"echo", false}};
    body["logprobs"] = opts_.mode == ProbeMode::logprob ? nlohmann::json(opts_.decode.top_logprobs) : nlohmann::json(nullptr);
    return body;
  }

  ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const override {
    const nlohmann::json reply = http::post_json(opts_.endpoint, "/v1/completions", request_body(request_bytes(ctx, q)),
                                                 opts_.retry, http::bearer_from_env(opts_.api_key_env));
    return parse_reply(reply, ctx.labels, opts_.mode);
  }

  static ClassLogits parse_reply(const nlohmann::json& reply, const LabelMap& labels, ProbeMode mode) {
    try {
      const auto& choice = reply.at("choices").at(0);
      if (mode == ProbeMode::generation) {
        return logits_from_generation(choice.at("text").get<std::string>(), labels);
      }
      const auto& top = choice.at("logprobs").at("top_logprobs").at(0);
      std::vector<TopToken> tokens;
      for (const auto& [tok, lp] : top.items()) tokens.push_back({tok, lp.get<double>()});
      return logits_from_top_tokens(std::move(tokens), labels);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::protocol, std::string("malformed completion reply: ") + e.what());
    }
  }

 private:
  Options opts_;
};

}  // namespace iclb
