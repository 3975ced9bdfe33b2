#!/usr/bin/env python3
"""Regenerate the bundled fixtures under data/.

data/smoke    20 bridge-style instances over a linked document graph, plus the
              mock endpoint script and the expected smoke-run counts.
data/scitrek  instances over full-text articles with per-article metadata.

Output is deterministic: rerunning rewrites identical files.
"""

import json
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"
SYLLABLES = ["ka", "lo", "ven", "dra", "mir", "sul", "te", "bor", "qui", "nas", "fel", "ro", "zan", "pe",
             "gri", "mo", "thal", "ux", "cor", "vi", "len", "da", "ost", "ham", "bri", "se", "ulm", "kor"]
STOP = {"a", "an", "the"}


def word(rng, lo=2, hi=3):
    while True:
        w = "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(lo, hi)))
        if w not in STOP:
            return w


def name(rng):
    return word(rng).capitalize() + " " + word(rng).capitalize()


def sentence(rng, n_words):
    words = [word(rng) for _ in range(n_words)]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def dump_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def dump_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def smoke(rng):
    n_docs, n_instances = 120, 20
    titles = []
    while len(titles) < n_docs:
        t = name(rng)
        if t not in titles:
            titles.append(t)
    bodies = {t: [sentence(rng, rng.randint(12, 18)) for _ in range(rng.randint(30, 45))] for t in titles}
    links = {t: rng.sample([u for u in titles if u != t], rng.randint(3, 6)) for t in titles}

    used_words = set()
    for body in bodies.values():
        for s in body:
            used_words.update(w.strip(".").lower() for w in s.split())

    def fresh_name():
        while True:
            first, last = word(rng, 3, 3), word(rng, 3, 3)
            if first not in used_words and last not in used_words:
                used_words.update([first, last])
                return first.capitalize() + " " + last.capitalize()

    instances, rules = [], []
    seeds_taken = set()
    for i in range(n_instances):
        while True:
            a = rng.choice([t for t in titles if t not in seeds_taken])
            targets = [u for u in links[a] if u not in seeds_taken]
            if targets:
                b = rng.choice(targets)
                break
        seeds_taken.update([a, b])
        answer, wrong = fresh_name(), fresh_name()
        ka = rng.randrange(len(bodies[a]))
        kb = rng.randrange(len(bodies[b]))
        bodies[a][ka] = f"{sentence(rng, 14)[:-1]} near {b}."
        bodies[b][kb] = f"In {b} the keeper of record was {answer}."
        extra = rng.choice([j for j in range(len(bodies[b])) if j != kb])
        tag = f"Smoke item {i:02d}:"
        question = f"{tag} who kept the record in the place named near {a}?"
        instances.append({
            "format_version": 1,
            "id": f"smoke-{i:02d}",
            "question": question,
            "answers": [answer],
            "supporting": [[a, ka], [b, kb], [b, extra]],
            "seed_docs": [a, b],
            "metadata": None,
        })
        correct = f"The article on {a} points to {b}, whose record names the keeper.\n\nFinal Answer: {answer}"
        incorrect = f"The article on {a} seems to point elsewhere.\n\nFinal Answer: {wrong}"
        unmarked = f"I read about {a} and {b} but could not settle on one name."
        pattern = [[correct, incorrect, unmarked],
                   [incorrect, correct, correct],
                   [incorrect, incorrect, incorrect],
                   [unmarked, correct, incorrect]][i % 4]
        rules.append({"match_all": [tag], "responses": pattern})

    docs = [{"format_version": 1, "id": t, "title": t, "text": bodies[t], "links": links[t]} for t in titles]
    out = ROOT / "smoke"
    dump_jsonl(out / "documents.jsonl", docs)
    dump_jsonl(out / "instances.jsonl", instances)
    dump_json(out / "mock_script.json", {
        "rules": rules,
        "default_response": "No scripted reply.\n\nFinal Answer: none",
        "judge_policy": "exact_match",
        "model_name": "mock-model",
    })
    dump_json(out / "config.json", {
        "corpus": {"documents": "documents.jsonl", "instances": "instances.jsonl", "format": "jsonl"},
        "counter": {"mode": "whitespace"},
        "expansion": {"target_tokens": 6000, "max_depth": 2, "shuffle_final_order": True},
        "proxies": [{"kind": "annotation"}, {"kind": "noisy", "base": "annotation", "ratio": "1:2"}],
        "endpoints": {
            "generation": {"model": "mock-teacher", "max_parallel": 4, "max_retries": 2},
            "judge": {"model": "mock-judge", "max_parallel": 4, "max_retries": 2},
        },
        "sampling": {"teacher": {"n": 3}},
        "evaluation": {"dataset_id": "smoke-hotpot"},
        "seed": 7,
    })
    # Per script pattern (i % 4), five instances each:
    #   0: correct, incorrect, unmarked -> 1 kept, 1 extraction failure
    #   1: incorrect, correct, correct  -> 2 kept
    #   2: all incorrect                -> rejected
    #   3: unmarked, correct, incorrect -> 1 kept, 1 extraction failure
    # Evaluation uses the first scripted reply: only pattern 0 is correct.
    dump_json(out / "expected.json", {
        "documents": n_docs,
        "instances": n_instances,
        "bundles": n_instances,
        "proxies": {"annotation": n_instances, "noisy-annotation-1-2": n_instances},
        "traces": 20,
        "rejects": 5,
        "extraction_failures": 10,
        "sft_records": 20,
        "evaluate": {"n_instances": 20, "em_mean": 25.0, "f1_mean": 25.0, "extraction_failures": 5,
                     "missing_predictions": 0},
        "judge": {"n_instances": 20, "judged_accuracy": 25.0, "unparseable_verdicts": 0, "unscored": 0},
    })


def scitrek(rng):
    n_articles, n_instances = 30, 12
    articles = []
    for k in range(n_articles):
        title_words = [word(rng).capitalize()] + [word(rng) for _ in range(rng.randint(4, 11))]
        authors = [name(rng) for _ in range(rng.randint(1, 5))]
        body = [sentence(rng, rng.randint(10, 16)) for _ in range(rng.randint(230, 270))]
        articles.append({"id": f"article-{k:02d}", "title": " ".join(title_words), "authors": authors,
                         "references": rng.randint(5, 60), "body": body})

    instances = []
    for i in range(n_instances):
        chosen = rng.sample(articles, rng.randint(3, 5))
        titles = {a["id"]: a["title"] for a in chosen}
        metadata = []
        for a in chosen:
            others = [b["id"] for b in chosen if b["id"] != a["id"]]
            cites = sorted(rng.sample(others, rng.randint(0, min(2, len(others)))))
            metadata.append({"doc_id": a["id"], "title": a["title"], "authors": a["authors"],
                             "reference_count": a["references"], "cites": [titles[c] for c in cites]})
        best = max(chosen, key=lambda a: (len(a["authors"]), a["references"]))
        instances.append({
            "format_version": 1,
            "id": f"scitrek-{i:02d}",
            "question": "How many references are listed by the article with the most authors?",
            "answers": [str(best["references"])],
            "supporting": [],
            "seed_docs": [a["id"] for a in chosen],
            "metadata": metadata,
        })

    docs = [{"format_version": 1, "id": a["id"], "title": a["title"], "text": a["body"], "links": []} for a in articles]
    out = ROOT / "scitrek"
    dump_jsonl(out / "documents.jsonl", docs)
    dump_jsonl(out / "instances.jsonl", instances)
    dump_json(out / "config.json", {
        "corpus": {"documents": "documents.jsonl", "instances": "instances.jsonl", "format": "jsonl"},
        "counter": {"mode": "whitespace"},
        "expansion": {"target_tokens": 128000, "max_depth": 0, "shuffle_final_order": False},
        "proxies": [{"kind": "metadata"}],
        "evaluation": {"dataset_id": "scitrek-like"},
        "seed": 3,
    })


def main():
    smoke(random.Random(20241014))
    scitrek(random.Random(6592))


if __name__ == "__main__":
    main()
