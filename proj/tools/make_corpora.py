#!/usr/bin/env python3
"""Generate the two bundled toy corpora.

public.txt stands in for the attacker's public text, victim.txt for the
private fine-tuning text. Both are produced by small sentence grammars with
disjoint topic vocabularies; documents are blank-line separated paragraphs.
"""

import argparse
import random
from pathlib import Path

FIRST = ["Alice", "Bruno", "Chen", "Dara", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas",
         "Kira", "Liam", "Maya", "Nikos", "Olga", "Pavel", "Quinn", "Rosa", "Sami", "Tara",
         "Umar", "Vera", "Wei", "Xena", "Yusuf", "Zoe"]
LAST = ["Abbott", "Baker", "Costa", "Dietz", "Evans", "Fischer", "Garcia", "Hansen", "Ito", "Jensen",
        "Kowalski", "Lopez", "Moreau", "Novak", "Okafor", "Perez", "Quist", "Rossi", "Silva", "Tanaka",
        "Ulrich", "Vargas", "Weber", "Young", "Zhang"]
DOMAINS = ["mail.com", "post.net", "inbox.org", "letters.io", "example.com", "webmail.co", "notes.info", "ring.biz"]

PUBLIC = {
    "subject": ["the river", "the old bridge", "a small village", "the northern forest", "the harbor",
                "the mountain road", "the city council", "the museum", "a local farmer", "the railway",
                "the library", "the winter festival", "the market square", "a travelling band", "the lighthouse"],
    "verb": ["was built in", "was restored in", "opened to visitors in", "was first mentioned in",
             "changed its name in", "was flooded in", "hosted a fair in", "was mapped in"],
    "adj": ["quiet", "famous", "ancient", "busy", "narrow", "green", "stone", "wooden", "coastal", "rural"],
    "noun": ["valley", "castle", "chapel", "mill", "garden", "tower", "canal", "square", "orchard", "inn"],
    "fact": ["is known for its", "attracts many", "still keeps an", "was praised for its", "lies next to an",
             "has a small", "once had a large"],
    "thing": ["bell tower", "stone wall", "music hall", "fish market", "clock", "vineyard", "school",
              "bakery", "cathedral", "stadium", "printing press", "observatory"],
    "people": ["tourists", "students", "painters", "merchants", "pilgrims", "sailors", "historians"],
}

VICTIM = {
    "subject": ["the patient", "our team", "the server", "the lab sample", "the invoice", "the courier",
                "the support ticket", "the new account", "the pharmacy", "the insurance claim",
                "the landlord", "the payroll run", "the nurse", "the contractor", "the auditor"],
    "verb": ["reported a", "requested a", "flagged a", "approved a", "rejected a", "logged a",
             "escalated a", "confirmed a", "scheduled a", "cancelled a"],
    "adj": ["delayed", "urgent", "missing", "duplicate", "pending", "refunded", "encrypted", "overdue",
            "partial", "private"],
    "noun": ["payment", "refill", "transfer", "checkup", "delivery", "password reset", "dosage change",
             "contract", "shipment", "backup"],
    "detail": ["after the second call", "before the deadline", "without a signature", "during the night shift",
               "on the billing portal", "by fax", "at the front desk", "through the mobile app"],
}


def person(rng):
    return f"{rng.choice(FIRST)} {rng.choice(LAST)}"


def email(rng, name):
    return f"{name.replace(' ', '').lower()}{rng.randint(10, 9999)}@{rng.choice(DOMAINS)}"


def phone(rng):
    return f"{rng.randint(200, 999)}-{rng.randint(100, 999)}-{rng.randint(1000, 9999)}"


def date(rng):
    return f"{rng.randint(1890, 2020)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"


def public_sentence(rng):
    g = PUBLIC
    kind = rng.randrange(7)
    if kind == 0:
        return f"{rng.choice(g['subject']).capitalize()} {rng.choice(g['verb'])} {rng.randint(1200, 2020)}."
    if kind == 1:
        return (f"The {rng.choice(g['adj'])} {rng.choice(g['noun'])} {rng.choice(g['fact'])} "
                f"{rng.choice(g['thing'])}.")
    if kind == 2:
        return (f"Each year about {rng.randint(2, 950)} {rng.choice(g['people'])} visit "
                f"{rng.choice(g['subject'])}.")
    if kind == 3:
        name = person(rng)
        return f"The guide {name} can be reached at {email(rng, name)} or by phone at {phone(rng)}."
    if kind == 4:
        return f"{person(rng)} wrote about {rng.choice(g['subject'])} on {date(rng)}."
    if kind == 5:
        return (f"Room {rng.randint(1, 480)} of the {rng.choice(g['adj'])} {rng.choice(g['noun'])} "
                f"holds {rng.randint(3, 9000)} old maps.")
    code = "".join(rng.choice("ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz0123456789") for _ in range(rng.randint(6, 12)))
    return f"The archive lists the item as {code}, catalogue {rng.randint(10, 99)}-{rng.randint(100, 999)}."


def victim_sentence(rng):
    g = VICTIM
    kind = rng.randrange(5)
    if kind == 0:
        return (f"{rng.choice(g['subject']).capitalize()} {rng.choice(g['verb'])} {rng.choice(g['adj'])} "
                f"{rng.choice(g['noun'])} {rng.choice(g['detail'])}.")
    if kind == 1:
        return f"Ticket {rng.randint(1000, 99999)} was closed with code {rng.randint(10, 99)}-{rng.randint(100, 999)}."
    if kind == 2:
        return (f"Please send the {rng.choice(g['noun'])} form to {person(rng)} "
                f"{rng.choice(g['detail'])}.")
    if kind == 3:
        return f"The {rng.choice(g['adj'])} {rng.choice(g['noun'])} costs {rng.randint(5, 990)} dollars per month."
    return f"{rng.choice(g['subject']).capitalize()} called back on {date(rng)} about the {rng.choice(g['noun'])}."


def corpus(rng, sentence, target_bytes):
    docs, seen, size = [], set(), 0
    while size < target_bytes:
        doc = " ".join(sentence(rng) for _ in range(rng.randint(2, 4)))
        if doc in seen:
            continue
        seen.add(doc)
        docs.append(doc)
        size += len(doc) + 2
    return docs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--bytes", type=int, default=200_000)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)
    pub = corpus(rng, public_sentence, args.bytes)
    vic = corpus(rng, victim_sentence, args.bytes)
    assert not set(pub) & set(vic)
    (out / "public.txt").write_text("\n\n".join(pub) + "\n", encoding="utf-8")
    (out / "victim.txt").write_text("\n\n".join(vic) + "\n", encoding="utf-8")
    print(f"public: {len(pub)} docs, victim: {len(vic)} docs")


if __name__ == "__main__":
    main()
