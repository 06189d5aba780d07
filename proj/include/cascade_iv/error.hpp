#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace cascade_iv {

/// Broad failure class; the CLI maps each onto a process exit code.
enum class ErrorKind { usage, data, numerical };

inline int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
    }
    return 1;
}

/// Exception carrying a module-qualified code such as "estimator.SingularFirstStage"
/// plus a JSON payload with whatever diagnostics the thrower had at hand.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message,
          nlohmann::json details = nlohmann::json::object())
        : std::runtime_error(message), kind_(kind), code_(std::move(code)),
          details_(std::move(details))
    {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }
    const nlohmann::json& details() const noexcept { return details_; }

    nlohmann::json to_json() const
    {
        return {{"error", code_}, {"message", what()}, {"details", details_}};
    }

private:
    ErrorKind kind_;
    std::string code_;
    nlohmann::json details_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, std::string_view code, const std::string& msg,
                              nlohmann::json details = nlohmann::json::object())
{
    throw Error(kind, std::string(code), msg, std::move(details));
}

} // namespace detail
} // namespace cascade_iv
