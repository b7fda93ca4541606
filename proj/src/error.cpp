#include "cellsync/error.hpp"

namespace cellsync {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TemplateSyntax: return "template-syntax";
    case ErrorCode::UndeclaredBlank: return "undeclared-blank";
    case ErrorCode::UnusedBlank: return "unused-blank";
    case ErrorCode::DuplicateBlank: return "duplicate-blank";
    case ErrorCode::MultilineBody: return "multiline-body";
    case ErrorCode::InvalidBlank: return "invalid-blank";
    case ErrorCode::MissingBinding: return "missing-binding";
    case ErrorCode::UnknownBlank: return "unknown-blank";
    case ErrorCode::KindMismatch: return "kind-mismatch";
    case ErrorCode::NoVariantForDialect: return "no-variant-for-dialect";
    case ErrorCode::TypeCheckFailed: return "type-check-failed";
    case ErrorCode::InvalidPack: return "invalid-pack";
    case ErrorCode::SyntaxError: return "syntax-error";
    case ErrorCode::UnboundVariable: return "unbound-variable";
    case ErrorCode::UnknownFunction: return "unknown-function";
    case ErrorCode::TypeError: return "type-error";
    case ErrorCode::IndexOutOfRange: return "index-out-of-range";
    case ErrorCode::NotAnInvocation: return "not-an-invocation";
    case ErrorCode::NonIdentifierArgument: return "non-identifier-argument";
    case ErrorCode::NoInvocation: return "no-invocation";
    case ErrorCode::InvocationLineModified: return "invocation-line-modified";
    case ErrorCode::FrozenInWritable: return "frozen-in-writable";
    case ErrorCode::SeqNotMonotonic: return "seq-not-monotonic";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::MalformedDocument: return "malformed-document";
    case ErrorCode::ExecutionFailed: return "execution-failed";
    case ErrorCode::SpawnFailed: return "spawn-failed";
    case ErrorCode::ProtocolError: return "protocol-error";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::DuplicateToolName: return "duplicate-tool-name";
    case ErrorCode::UnknownTool: return "unknown-tool";
    case ErrorCode::UnknownAction: return "unknown-action";
    case ErrorCode::ArityMismatch: return "arity-mismatch";
    case ErrorCode::InstanceExists: return "instance-exists";
    case ErrorCode::NoInstance: return "no-instance";
    case ErrorCode::UnknownCell: return "unknown-cell";
    case ErrorCode::UnknownTarget: return "unknown-target";
    case ErrorCode::EmptySelection: return "empty-selection";
    case ErrorCode::ActionRejected: return "action-rejected";
    case ErrorCode::UnknownMethod: return "unknown-method";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::InvalidParams: return "invalid-params";
    case ErrorCode::NoSession: return "no-session";
    case ErrorCode::NotebookLoadFailed: return "notebook-load-failed";
    case ErrorCode::BindFailed: return "bind-failed";
  }
  return "unknown";
}

std::optional<ErrorCode> parse_error_code(std::string_view wire) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::BindFailed); ++i)
    if (to_string(static_cast<ErrorCode>(i)) == wire) return static_cast<ErrorCode>(i);
  return std::nullopt;
}

}  // namespace cellsync
