#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace convo {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  ParseError,
  // domain
  AlternationViolation,
  EmptyUtterance,
  OutOfRange,
  // corpus
  CycleDetected,
  EmptyCorpus,
  // embeddings
  DimensionMismatch,
  RemoteUnavailable,
  MissingEntry,
  InvalidEmbedding,
  // metrics
  ZeroVector,
  NoVectorTokens,
  ZeroSum,
  InsufficientTurns,
  // hybrid / stats
  InsufficientData,
  ZeroVariance,
  LengthMismatch,
  // selfplay
  HeldOutMismatch,
  InsufficientConversations,
  // botkit
  BotTimeout,
  BotUnavailable,
  ProtocolError,
  BindError,
  // evalserver
  UnknownBot,
  UnknownSession,
  SessionClosed,
  PendingReply,
  NotABotUtterance,
  UnknownIndex,
  TooFewTurns,
};

std::string_view to_string(ErrorCode code);

// Every failure the library reports carries one of the codes above so callers
// (CLI, REST layer) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace convo
