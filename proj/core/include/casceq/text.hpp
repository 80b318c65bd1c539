#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace casceq {

/// The 48-symbol character inventory shared by the BoC concept, the CTC
/// probe and the CTC erasure concept: a-z, 0-9, space, apostrophe and
/// . , ? ! ; : - " ( )
namespace alphabet {

inline constexpr std::string_view kSymbols = "abcdefghijklmnopqrstuvwxyz0123456789 '.,?!;:-\"()";
inline constexpr int kSize = 48;
inline constexpr int kBlank = 48;    // CTC blank class
inline constexpr int kClasses = 49;  // symbols + blank

static_assert(kSymbols.size() == kSize);

std::optional<int> index_of(char c);
char symbol(int index);

}  // namespace alphabet

/// Decodes UTF-8, strips diacritics from Latin letters, lowercases, maps
/// typographic quotes/dashes to their ASCII forms, turns whitespace runs
/// into one space, drops everything outside the alphabet and trims.
std::string normalize_text(std::string_view utf8);

/// Alphabet indices of normalize_text(text).
std::vector<int> encode_text(std::string_view text);
std::string decode_symbols(std::span<const int> symbols);

/// Character frequencies over the alphabet after normalization; sums to 1
/// unless no character survives, in which case it is all zeros.
std::array<double, alphabet::kSize> boc_vector(std::string_view text);

/// Code-point Levenshtein distance.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// max(0, 1 - edit_distance(hyp, ref) / len(ref)); ref must be nonempty.
double text_decodability(std::string_view hyp, std::string_view ref);

/// UTF-8 to code points; invalid bytes become U+FFFD.
std::u32string utf8_decode(std::string_view utf8);
std::string utf8_encode(std::u32string_view text);

}  // namespace casceq
