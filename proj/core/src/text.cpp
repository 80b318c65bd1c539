#include "casceq/text.hpp"

#include <algorithm>
#include <numeric>

#include "casceq/error.hpp"

namespace casceq {

namespace alphabet {

std::optional<int> index_of(char c) {
  const auto pos = kSymbols.find(c);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<int>(pos);
}

char symbol(int index) {
  if (index < 0 || index >= kSize) throw InputError("alphabet index out of range");
  return kSymbols[static_cast<std::size_t>(index)];
}

}  // namespace alphabet

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(U'�');
      ++i;
      continue;
    }
    if (i + static_cast<std::size_t>(len) > s.size()) {
      out.push_back(U'�');
      break;
    }
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((b & 0xc0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3f);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }
  return out;
}

namespace {

// Base letters of the precomposed Latin-1 Supplement and Latin Extended-A
// blocks (U+00C0..U+017F): the NFD base when the rest of the decomposition is
// combining marks. '\0' marks code points with no canonical decomposition
// (AE, O-stroke, eth, L-stroke, ...), which are dropped.
constexpr char kLatinBase[] =
    // U+00C0..U+00FF
    "AAAAAA\0CEEEEIIII"
    "\0NOOOOO\0\0UUUUY\0\0"
    "aaaaaa\0ceeeeiiii"
    "\0nooooo\0\0uuuuy\0y"
    // U+0100..U+017F
    "AaAaAaCcCcCcCcDd"
    "\0\0EeEeEeEeEeGgGg"
    "GgGgHh\0\0IiIiIiIi"
    "I\0\0\0JjKk\0LlLlLl\0"
    "\0\0\0NnNnNn\0\0\0OoOo"
    "Oo\0\0RrRrRrSsSsSs"
    "SsTtTt\0\0UuUuUuUu"
    "UuUuWwYyYZzZzZz\0";

char32_t fold(char32_t cp) {
  if (cp >= 0x300 && cp <= 0x36f) return 0;  // combining diacritics
  if (cp >= 0xc0 && cp <= 0x17f) {
    const char base = kLatinBase[cp - 0xc0];
    if (base == '\0') return 0;
    cp = static_cast<unsigned char>(base);
  }
  switch (cp) {
    case 0x2018: case 0x2019: case 0x201b: case 0x2032: return U'\'';
    case 0x201c: case 0x201d: case 0x201f: case 0x2033: return U'"';
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: return U'-';
    default: break;
  }
  if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
  return cp;
}

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' ||
         cp == U'\f' || cp == 0xa0 || cp == 0x2009 || cp == 0x200a || cp == 0x202f ||
         cp == 0x3000;
}

}  // namespace

static_assert(sizeof(kLatinBase) == 0x180 - 0xc0 + 1);

std::string normalize_text(std::string_view utf8) {
  std::string out;
  bool pending_space = false;
  for (char32_t raw : utf8_decode(utf8)) {
    if (is_space(raw)) {
      pending_space = !out.empty();
      continue;
    }
    const char32_t cp = fold(raw);
    if (cp == 0 || cp >= 0x80) continue;
    const char c = static_cast<char>(cp);
    if (c == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (!alphabet::index_of(c)) continue;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<int> encode_text(std::string_view text) {
  std::vector<int> out;
  for (char c : normalize_text(text)) out.push_back(*alphabet::index_of(c));
  return out;
}

std::string decode_symbols(std::span<const int> symbols) {
  std::string out;
  out.reserve(symbols.size());
  for (int s : symbols) out.push_back(alphabet::symbol(s));
  return out;
}

std::array<double, alphabet::kSize> boc_vector(std::string_view text) {
  std::array<double, alphabet::kSize> v{};
  const auto symbols = encode_text(text);
  if (symbols.empty()) return v;
  for (int s : symbols) v[static_cast<std::size_t>(s)] += 1.0;
  const double total = static_cast<double>(symbols.size());
  for (double& x : v) x /= total;
  return v;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  const auto x = utf8_decode(a);
  const auto y = utf8_decode(b);
  std::vector<std::size_t> row(y.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0u : 1u)});
      diag = up;
    }
  }
  return row[y.size()];
}

double text_decodability(std::string_view hyp, std::string_view ref) {
  const std::size_t ref_len = utf8_decode(ref).size();
  if (ref_len == 0) throw InputError("text_decodability: empty reference");
  const double cer = static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref_len);
  return std::max(0.0, 1.0 - cer);
}

}  // namespace casceq
