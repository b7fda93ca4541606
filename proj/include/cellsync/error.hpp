#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cellsync {

// Every failure the engine reports carries one of these codes. The wire form
// (to_string) is what protocol clients match on.
enum class ErrorCode {
  // template engine
  TemplateSyntax,
  UndeclaredBlank,
  UnusedBlank,
  DuplicateBlank,
  MultilineBody,
  InvalidBlank,
  MissingBinding,
  UnknownBlank,
  KindMismatch,
  NoVariantForDialect,
  TypeCheckFailed,
  InvalidPack,
  // minitable
  SyntaxError,
  UnboundVariable,
  UnknownFunction,
  TypeError,
  IndexOutOfRange,
  // code document
  NotAnInvocation,
  NonIdentifierArgument,
  NoInvocation,
  InvocationLineModified,
  FrozenInWritable,
  SeqNotMonotonic,
  VersionMismatch,
  MalformedDocument,
  // executor
  ExecutionFailed,
  SpawnFailed,
  ProtocolError,
  Timeout,
  // session
  DuplicateToolName,
  UnknownTool,
  UnknownAction,
  ArityMismatch,
  InstanceExists,
  NoInstance,
  UnknownCell,
  UnknownTarget,
  EmptySelection,
  ActionRejected,
  // protocol
  UnknownMethod,
  ParseError,
  InvalidParams,
  NoSession,
  NotebookLoadFailed,
  BindFailed,
};

std::string_view to_string(ErrorCode code);
std::optional<ErrorCode> parse_error_code(std::string_view wire);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::string> tool_message = std::nullopt)
      : std::runtime_error(message), code_(code), tool_message_(std::move(tool_message)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::optional<std::string>& tool_message() const noexcept { return tool_message_; }

 private:
  ErrorCode code_;
  std::optional<std::string> tool_message_;
};

}  // namespace cellsync
