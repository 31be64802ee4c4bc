"""Frozen scoring fixtures shared by the unit and acceptance suites."""

# (answer, reference, expected score)
MULTIPLE_CHOICE_CASES = [
    ("The answer is B", "B", 1.0),
    ("b.", "B", 1.0),
    ("I am unsure", "B", 0.0),
    ("B", "B", 1.0),
    ("(C)", "C", 1.0),
    ("Answer: d", "D", 1.0),
    ("answer: D) because of X", "D", 1.0),
    ("C. Paris is the capital", "C", 1.0),
    ("My choice: [A]", "A", 1.0),
    ("Option B, then maybe C", "B", 1.0),
    ("Option B, then maybe C", "C", 0.0),
    ("", "A", 0.0),
    ("E", "A", 0.0),
    ("The best option is E", "B", 0.0),
    ("ABC", "A", 0.0),
    ("BAD idea; go with C", "C", 1.0),
    ("**B**", "B", 1.0),
    ("a", "A", 1.0),
    ("I'd go with c!", "C", 1.0),
    ("Final answer:\nB", "B", 1.0),
    ("The answer is D.", "C", 0.0),
    ("x-b-y", "B", 1.0),
    ("A good answer is B", "B", 0.0),
    ("Reasoning... therefore (d).", "D", 1.0),
]

NUMERIC_CASES = [
    ("so the total is 42.", "42", 1.0),
    ("1,234", "1234", 1.0),
    ("between 41 and 42", "41", 0.0),
    ("between 41 and 42", "42", 1.0),
    ("The answer is 3.50", "3.5", 1.0),
    ("5.0", "5", 1.0),
    ("It costs $1,234.00 in total", "1234", 1.0),
    ("Temperature fell to -7 degrees", "-7", 1.0),
    ("Temperature fell to -7 degrees", "7", 0.0),
    ("+15", "15", 1.0),
    ("12,345,678 people", "12345678", 1.0),
    ("no digits here", "3", 0.0),
    ("", "0", 0.0),
    ("0.50", "0.5", 1.0),
    ("0", "0", 1.0),
    ("step 1: 3 + 4 = 7\nstep 2: 7 * 2 = 14", "14", 1.0),
    ("#### 72", "72", 1.0),
    ("The ratio is 2.25", "2.250", 1.0),
    ("He has 7 apples and 3 pears", "7", 0.0),
    ("100%", "100", 1.0),
    ("answer=18", "18", 1.0),
    ("x-5", "5", 1.0),
    ("1,000.5", "1000.50", 1.0),
    ("3.14159", "3.14", 0.0),
]

# (file contents, expected message fragment, expected line numbers)
MALFORMED_DATASETS = [
    (
        '{"id": "a", "prompt": "p", "answer": "1"}\n{"id": "b", "prompt": "p"}\n',
        "2: missing field 'answer'",
        [2],
    ),
    (
        "".join(
            f'{{"id": "{i}", "prompt": "p", "answer": "1"}}\n'
            for i in ["x1", "dup", "x3", "x4", "x5", "x6", "dup"]
        ),
        "duplicate id 'dup' on lines 2 and 7",
        [2, 7],
    ),
    ('{"id": "a", "prompt": "p", "answer": "1"}\n{not json\n', "2: invalid JSON", [2]),
    ('{"id": "a", "answer": "1"}\n', "1: missing field 'prompt'", [1]),
    ('{"id": "a", "prompt": "p", "answer": ""}\n', "1:", [1]),
]
