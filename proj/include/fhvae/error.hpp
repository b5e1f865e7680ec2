#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fhvae {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Caller violated a precondition: wrong shape, non-finite input, bad index.
class InputContractError : public Error {
public:
	using Error::Error;
};

/// A loss term or intermediate became non-finite.
class NumericError : public Error {
public:
	NumericError(const std::string& term, const std::string& what)
		: Error("non-finite value in " + term + ": " + what), term_(term) {}
	const std::string& term() const noexcept { return term_; }

private:
	std::string term_;
};

/// Dataset content is unusable (utterance too short, missing label, ...).
class DataError : public Error {
public:
	using Error::Error;
};

/// On-disk file does not match the expected layout.
class FormatError : public Error {
public:
	FormatError(const std::string& what, std::uint64_t offset)
		: Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
	std::uint64_t offset() const noexcept { return offset_; }

private:
	std::uint64_t offset_;
};

/// Bad configuration values or unknown keys.
class ConfigError : public Error {
public:
	using Error::Error;
};

} // namespace fhvae
