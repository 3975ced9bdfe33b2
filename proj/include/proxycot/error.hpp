#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace proxycot {

enum class Errc {
    invalid_argument,
    file_unreadable,
    file_unwritable,
    malformed_record,
    unsupported_version,
    dangling_reference,
    duplicate_id,
    vocab_unloadable,
    missing_seed_document,
    budget_below_seeds,
    unknown_sentence,
    dimension_mismatch,
    zero_vector,
    non_finite,
    empty_support,
    missing_metadata,
    empty_context,
    no_answer_found,
    timeout,
    rate_limited,
    server_error,
    request_rejected,
    transport,
    malformed_response,
    context_overflow,
    dimension_inconsistent,
    unparseable_verdict,
    missing_bundle,
    missing_placeholder,
    usage_error,
    config_error,
};

constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::file_unreadable: return "FileUnreadable";
    case Errc::file_unwritable: return "FileUnwritable";
    case Errc::malformed_record: return "MalformedRecord";
    case Errc::unsupported_version: return "UnsupportedVersion";
    case Errc::dangling_reference: return "DanglingReference";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::vocab_unloadable: return "VocabUnloadable";
    case Errc::missing_seed_document: return "MissingSeedDocument";
    case Errc::budget_below_seeds: return "BudgetBelowSeeds";
    case Errc::unknown_sentence: return "UnknownSentence";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::zero_vector: return "ZeroVector";
    case Errc::non_finite: return "NonFinite";
    case Errc::empty_support: return "EmptySupport";
    case Errc::missing_metadata: return "MissingMetadata";
    case Errc::empty_context: return "EmptyContext";
    case Errc::no_answer_found: return "NoAnswerFound";
    case Errc::timeout: return "Timeout";
    case Errc::rate_limited: return "RateLimited";
    case Errc::server_error: return "ServerError";
    case Errc::request_rejected: return "RequestRejected";
    case Errc::transport: return "TransportError";
    case Errc::malformed_response: return "MalformedResponse";
    case Errc::context_overflow: return "ContextOverflow";
    case Errc::dimension_inconsistent: return "DimensionInconsistent";
    case Errc::unparseable_verdict: return "UnparseableVerdict";
    case Errc::missing_bundle: return "MissingBundle";
    case Errc::missing_placeholder: return "MissingPlaceholder";
    case Errc::usage_error: return "UsageError";
    case Errc::config_error: return "ConfigError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers can branch on the kind (skip vs. abort) without parsing messages.
/// `subject()` names the offending entity: a line number, an instance id, a
/// document id, a placeholder.
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string subject, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + "(" + subject + "): " + message),
          code_(code),
          subject_(std::move(subject)) {}

    Errc code() const noexcept { return code_; }
    const std::string& subject() const noexcept { return subject_; }

private:
    Errc code_;
    std::string subject_;
};

}  // namespace proxycot
