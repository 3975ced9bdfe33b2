#include <gtest/gtest.h>

#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "proxycot/scoring.hpp"

using namespace proxycot;

namespace {

// Independent oracle: regex-based SQuAD normalization plus an O(n*m)
// bag intersection with "used" flags.
std::string oracle_normalize(const std::string& s) {
    std::string lower;
    for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    static const std::string punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::string nopunct;
    for (char c : lower)
        if (punct.find(c) == std::string::npos) nopunct.push_back(c);
    static const std::regex articles("\\b(a|an|the)\\b");
    std::string no_articles = std::regex_replace(nopunct, articles, " ");
    std::istringstream in(no_articles);
    std::string w, out;
    while (in >> w) out += (out.empty() ? "" : " ") + w;
    return out;
}

std::vector<std::string> oracle_tokens(const std::string& s) {
    std::istringstream in(oracle_normalize(s));
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double oracle_f1(const std::string& gold, const std::string& pred) {
    auto g = oracle_tokens(gold);
    auto p = oracle_tokens(pred);
    if (g.empty() && p.empty()) return 1.0;
    if (g.empty() || p.empty()) return 0.0;
    std::vector<bool> used(g.size(), false);
    double overlap = 0;
    for (const auto& t : p) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!used[i] && g[i] == t) {
                used[i] = true;
                overlap += 1;
                break;
            }
        }
    }
    if (overlap == 0) return 0.0;
    double prec = overlap / static_cast<double>(p.size());
    double rec = overlap / static_cast<double>(g.size());
    return 2 * prec * rec / (prec + rec);
}

std::string random_answer(std::mt19937_64& rng) {
    static const std::vector<std::string> words = {"the", "The", "a", "An", "paris", "Paris.", "rome", "gill",
                                                   "Roma", "william", "W", "shakespeare", "42", "forty-two",
                                                   "it's", "New", "york", "(wine)", ",", "  ", "THE"};
    std::uniform_int_distribution<int> len(0, 6);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    std::string s;
    int n = len(rng);
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[pick(rng)];
    return s;
}

}  // namespace

TEST(NormalizeAnswer, StatedRules) {
    EXPECT_EQ(normalize_answer("The Paris."), "paris");
    EXPECT_EQ(normalize_answer("  ANSWER "), "answer");
    EXPECT_EQ(normalize_answer(""), "");
    EXPECT_EQ(normalize_answer("an  apple,  a   pear"), "apple pear");
    EXPECT_EQ(normalize_answer("theatre"), "theatre");
}

TEST(NormalizeAnswer, IdempotentAndMatchesOracle) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        auto s = random_answer(rng);
        auto once = normalize_answer(s);
        EXPECT_EQ(normalize_answer(once), once) << s;
        EXPECT_EQ(once, oracle_normalize(s)) << s;
    }
}

TEST(ExactMatch, Examples) {
    std::vector<std::string> paris{"Paris"};
    EXPECT_EQ(exact_match(paris, "paris"), 1);
    std::vector<std::string> num{"42"};
    EXPECT_EQ(exact_match(num, "forty-two"), 0);
    std::vector<std::string> two{"William Shakespeare", "Roma Gill"};
    EXPECT_EQ(exact_match(two, "Roma Gill"), 1);
}

TEST(ExactMatch, RawModeComparesTrimmedStrings) {
    std::vector<std::string> paris{"Paris"};
    EXPECT_EQ(exact_match(paris, "paris", MatchMode::raw), 0);
    EXPECT_EQ(exact_match(paris, " Paris ", MatchMode::raw), 1);
}

TEST(ExactMatch, EmptyGoldRejected) {
    std::vector<std::string> none;
    EXPECT_THROW(exact_match(none, "x"), Error);
    EXPECT_THROW(token_f1(none, "x"), Error);
}

TEST(TokenF1, HandComputedHalf) {
    std::vector<std::string> gold{"W Shakespeare"};
    EXPECT_NEAR(token_f1(gold, "William Shakespeare"), 0.5, 1e-12);
    EXPECT_NEAR(reward(gold, "William Shakespeare"), 0.5, 1e-12);
}

TEST(TokenF1, IdenticalAndDisjoint) {
    std::vector<std::string> gold{"new york wine"};
    EXPECT_DOUBLE_EQ(token_f1(gold, "new york wine"), 1.0);
    EXPECT_DOUBLE_EQ(token_f1(gold, "finger lakes"), 0.0);
    std::vector<std::string> empty_gold{"the"};
    EXPECT_DOUBLE_EQ(token_f1(empty_gold, "a"), 1.0);
    EXPECT_DOUBLE_EQ(token_f1(empty_gold, "x"), 0.0);
}

TEST(TokenF1, MaxOverGolds) {
    std::vector<std::string> gold{"William Shakespeare", "Roma Gill"};
    EXPECT_DOUBLE_EQ(token_f1(gold, "Roma Gill"), 1.0);
    EXPECT_NEAR(token_f1(gold, "Roma Shakespeare"), 0.5, 1e-12);
}

TEST(Reward, Examples) {
    std::vector<std::string> gold{"Paris"};
    EXPECT_DOUBLE_EQ(reward(gold, "paris"), 2.0);
    EXPECT_DOUBLE_EQ(reward(gold, "rome"), 0.0);
}

TEST(Reward, FuzzedInvariants) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::string> gold{random_answer(rng)};
        if (rng() % 3 == 0) gold.push_back(random_answer(rng));
        auto pred = random_answer(rng);
        double f1 = token_f1(gold, pred);
        int em = exact_match(gold, pred);
        double r = reward(gold, pred);
        EXPECT_EQ(r, f1 + em);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 2.0);
        if (em == 1) {
            EXPECT_EQ(f1, 1.0);
            EXPECT_EQ(r, 2.0);
        }
        double best = 0.0;
        for (const auto& g : gold) best = std::max(best, oracle_f1(g, pred));
        EXPECT_NEAR(f1, best, 1e-12) << pred;
    }
}

TEST(TokenF1, SymmetricOnSingleGold) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
        auto a = random_answer(rng);
        auto b = random_answer(rng);
        std::vector<std::string> ga{a}, gb{b};
        EXPECT_NEAR(token_f1(ga, b), token_f1(gb, a), 1e-15);
    }
}

TEST(ScoreAnswer, RewardIsSum) {
    std::vector<std::string> gold{"Roma Gill"};
    auto s = score_answer(gold, "The Roma Gill");
    EXPECT_EQ(s.normalized, "roma gill");
    EXPECT_EQ(s.em, 1);
    EXPECT_EQ(s.reward, s.f1 + s.em);
}

TEST(ExtractAnswer, MarkerRules) {
    EXPECT_EQ(extract_answer("reasoning goes here. Final Answer: Paris"), "Paris");
    EXPECT_THROW(extract_answer("no marker here"), Error);
    try {
        extract_answer("nothing");
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::no_answer_found);
    }
    EXPECT_EQ(extract_answer("Final Answer: Rome\nwait.\nFinal Answer: Paris"), "Paris");
}

TEST(ExtractAnswer, StopsAtBlankLine) {
    EXPECT_EQ(extract_answer("x\nFinal Answer:\n  Roma Gill  \n\nExtra commentary"), "Roma Gill");
    EXPECT_FALSE(try_extract_answer("Final Answer:   \n\n").has_value());
    AnswerMarker custom{"ANSWER>"};
    EXPECT_EQ(extract_answer("think ANSWER> 7", custom), "7");
}
