#pragma once

#include <memory>
#include <string>

#include "dialfuse/service.hpp"

namespace dialfuse {

// JSON API over an EvalService:
//   POST /sessions                 {model}                -> session
//   GET  /sessions/{id}                                   -> session
//   POST /sessions/{id}/messages   {text}                 -> {response, state, knowledge, turn_index}
//   POST /sessions/{id}/rating     {success, appropriateness, engagingness, rater_id?}
//   POST /pairwise                 {dialog_a_id, dialog_b_id, overall, a_/b_ scores, rater_id?}
//   GET  /aggregates                                      -> tables
//   GET  /models                                          -> {models}
// The X-Rater-Id header supplies rater_id when the body omits it. Errors are
// {code, message} with 400 (validation), 404 (not found), 409 (conflict),
// 502 (model backend) or 500.
class HttpFrontend {
 public:
  explicit HttpFrontend(EvalService& service);
  ~HttpFrontend();

  // Port 0 picks a free port. Returns the bound port; throws IoError.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  // bind() + serve() on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dialfuse
