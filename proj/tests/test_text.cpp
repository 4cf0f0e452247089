#include <regex>

#include <gtest/gtest.h>

#include "evoconfig/text.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::Gen;

TEST(Text, TrimAndSplit) {
    EXPECT_EQ(text::trim("  a b \t\n"), "a b");
    EXPECT_EQ(text::trim(""), "");
    EXPECT_EQ(text::split_lines("a\r\nb\n\nc"), (std::vector<std::string>{"a", "b", "", "c"}));
    EXPECT_EQ(text::split_lines("a\n"), (std::vector<std::string>{"a"}));
    EXPECT_TRUE(text::split_lines("").empty());
    EXPECT_EQ(text::split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
    EXPECT_EQ(text::join({"x", "y", "z"}, ", "), "x, y, z");
}

TEST(Text, CaseAndReplace) {
    EXPECT_TRUE(text::icontains("ModuleNotFoundError", "modulenotfound"));
    EXPECT_FALSE(text::contains("abc", "abd"));
    EXPECT_EQ(text::replace_all("a-b-c", "-", "+"), "a+b+c");
    EXPECT_EQ(text::replace_all("aaa", "a", "aa"), "aaaaaa");
    EXPECT_EQ(text::single_line("  one\n two\t\tthree  "), "one two three");
}

TEST(Text, ClipRespectsBound) {
    Gen g(7);
    for (int i = 0; i < 500; ++i) {
        std::string s = g.word(0, 60);
        std::size_t cap = static_cast<std::size_t>(g.uniform(0, 70));
        auto out = text::clip(s, cap);
        EXPECT_LE(out.size(), cap);
        if (s.size() <= cap) {
            EXPECT_EQ(out, s);
        } else if (cap > 3) {
            EXPECT_EQ(out.substr(out.size() - 3), "...");
        }
    }
}

TEST(Text, KeepTailKeepsTheEnd) {
    bool clipped = false;
    EXPECT_EQ(text::keep_tail("abcdef", 3, clipped), "def");
    EXPECT_TRUE(clipped);
    EXPECT_EQ(text::keep_tail("abc", 3, clipped), "abc");
    EXPECT_FALSE(clipped);
}

TEST(Text, RegexEscapeMatchesLiterally) {
    Gen g(11);
    const std::string meta = R"(\^$.|?*+()[]{}/ab)";
    for (int i = 0; i < 300; ++i) {
        std::string s;
        int n = g.uniform(1, 12);
        for (int k = 0; k < n; ++k) s += meta[static_cast<std::size_t>(g.uniform(0, static_cast<int>(meta.size()) - 1))];
        std::regex re(text::regex_escape(s));
        EXPECT_TRUE(std::regex_match(s, re)) << s;
    }
}

TEST(Text, ShellWords) {
    EXPECT_EQ(text::shell_words(R"(sed -i 's/a b/c/' "x y" z\ w)"),
              (std::vector<std::string>{"sed", "-i", "s/a b/c/", "x y", "z w"}));
    EXPECT_TRUE(text::shell_words("   ").empty());
}

TEST(Text, FnvKnownVectors) {
    // Reference values of 64-bit FNV-1a.
    EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(text::fnv1a64("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(text::hex64(0xabcULL), "0000000000000abc");
}
