#include "convo/error.hpp"

namespace convo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::AlternationViolation: return "AlternationViolation";
    case ErrorCode::EmptyUtterance: return "EmptyUtterance";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorCode::MissingEntry: return "MissingEntry";
    case ErrorCode::InvalidEmbedding: return "InvalidEmbedding";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NoVectorTokens: return "NoVectorTokens";
    case ErrorCode::ZeroSum: return "ZeroSum";
    case ErrorCode::InsufficientTurns: return "InsufficientTurns";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::HeldOutMismatch: return "HeldOutMismatch";
    case ErrorCode::InsufficientConversations: return "InsufficientConversations";
    case ErrorCode::BotTimeout: return "BotTimeout";
    case ErrorCode::BotUnavailable: return "BotUnavailable";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::UnknownBot: return "UnknownBot";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::SessionClosed: return "SessionClosed";
    case ErrorCode::PendingReply: return "PendingReply";
    case ErrorCode::NotABotUtterance: return "NotABotUtterance";
    case ErrorCode::UnknownIndex: return "UnknownIndex";
    case ErrorCode::TooFewTurns: return "TooFewTurns";
  }
  return "Unknown";
}

}  // namespace convo
