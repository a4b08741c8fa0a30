#include <cctype>
#include <string>
#include <vector>

std::string toUpper(const std::string &text) {
    std::string result = text;
    for (char &ch : result) {
        ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    return result;
}

std::vector<std::string> splitOn(const std::string &line, char delimiter) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : line) {
        if (c == delimiter) {
            parts.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    parts.push_back(current);
    return parts;
}

bool startsWith(const std::string &haystack, const std::string &prefix) {
    return haystack.size() >= prefix.size() &&
           haystack.compare(0, prefix.size(), prefix) == 0;
}

std::string trim(const std::string &s) {
    size_t first = s.find_first_not_of(" \t\n");
    if (first == std::string::npos) return "";
    size_t last = s.find_last_not_of(" \t\n");
    return s.substr(first, last - first + 1);
}

int countVowels(const std::string &word) {
    int vowels = 0;
    for (char letter : word) {
        switch (std::tolower(letter)) {
        case 'a': case 'e': case 'i': case 'o': case 'u':
            ++vowels;
            break;
        default:
            break;
        }
    }
    return vowels;
}

std::string joinWith(const std::vector<std::string> &pieces, const std::string &sep) {
    std::string joined;
    for (size_t n = 0; n < pieces.size(); ++n) {
        if (n > 0) joined += sep;
        joined += pieces[n];
    }
    return joined;
}

bool isPalindrome(const std::string &candidate) {
    size_t left = 0;
    size_t right = candidate.empty() ? 0 : candidate.size() - 1;
    while (left < right) {
        if (candidate[left] != candidate[right]) return false;
        ++left;
        --right;
    }
    return true;
}

std::string repeat(const std::string &unit, int times) {
    std::string out;
    out.reserve(unit.size() * times);
    for (int r = 0; r < times; ++r) out += unit;
    return out;
}

std::string escapeQuotes(const std::string &raw) {
    std::string escaped;
    for (char q : raw) {
        if (q == '"') escaped += "\\\"";
        else escaped += q;
    }
    return escaped;
}

void logValue(const char *label, int value) {
    printf("%s: value=%d\n", label, value);
}
