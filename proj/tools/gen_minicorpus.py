#!/usr/bin/env python3
"""Generates data/minicorpus.jsonl: small templated functions in every bundled
language, most paired with a one-line docstring."""
import json
import random
import sys

FUNCS = {
    "sum": ["sum", "total", "accumulate", "addAll", "sumValues"],
    "max": ["maxValue", "largest", "findMax", "peak", "highest"],
    "count": ["countOf", "occurrences", "tally", "countMatches", "frequency"],
    "contains": ["contains", "hasValue", "includes", "member", "exists"],
    "clamp": ["clamp", "bound", "limit", "restrict", "fitRange"],
}
ARRAYS = ["arr", "values", "items", "data", "nums", "xs", "buf"]
SCALARS = ["acc", "result", "best", "cnt", "res", "out"]
INDICES = ["i", "j", "k", "idx", "pos"]
TARGETS = ["target", "key", "needle", "want", "query"]
LOW_HIGH = [("lo", "hi"), ("low", "high"), ("minimum", "maximum"), ("a", "b")]

DOCS = {
    "sum": ["Return the sum of all elements in {a} .", "Adds up every value of the array .",
            "Computes the total of the given numbers ."],
    "max": ["Return the largest element of {a} .", "Finds the maximum value in the array .",
            "Scan the list and keep the biggest value ."],
    "count": ["Count how many times {t} appears in {a} .", "Returns the number of elements equal to the key .",
              "Counts matching entries ."],
    "contains": ["Check whether {t} occurs in {a} .", "Returns true if the value is present .",
                 "Linear search for an element ."],
    "clamp": ["Clamp {v} into the closed range .", "Limits a value to lie between two bounds .",
              "Returns the value restricted to the interval ."],
}

T = {}
T["mini"] = {
    "sum": "int {f}(int {a}[], int n) {{\n    int {s} = 0;\n    for (int {i} = 0; {i} < n; {i}++) {{\n        {s} += {a}[{i}];\n    }}\n    return {s};\n}}",
    "max": "int {f}(int {a}[], int n) {{\n    int {s} = {a}[0];\n    for (int {i} = 1; {i} < n; {i}++) {{\n        if ({a}[{i}] > {s}) {{\n            {s} = {a}[{i}];\n        }}\n    }}\n    return {s};\n}}",
    "count": "int {f}(int {a}[], int n, int {t}) {{\n    int {s} = 0;\n    int {i} = 0;\n    while ({i} < n) {{\n        if ({a}[{i}] == {t}) {{\n            {s}++;\n        }}\n        {i}++;\n    }}\n    return {s};\n}}",
    "contains": "bool {f}(int {a}[], int n, int {t}) {{\n    for (int {i} = 0; {i} < n; {i}++) {{\n        if ({a}[{i}] == {t}) {{\n            return true;\n        }}\n    }}\n    return false;\n}}",
    "clamp": "int {f}(int {v}, int {lo}, int {hi}) {{\n    if ({v} < {lo}) {{\n        return {lo};\n    }}\n    if ({v} > {hi}) {{\n        return {hi};\n    }}\n    return {v};\n}}",
}
T["c"] = T["mini"] | {
    "contains": "int {f}(const int *{a}, size_t n, int {t}) {{\n    for (size_t {i} = 0; {i} < n; {i}++) {{\n        if ({a}[{i}] == {t}) {{\n            return 1;\n        }}\n    }}\n    return 0;\n}}",
}
T["java"] = {
    "sum": "public static int {f}(int[] {a}) {{\n    int {s} = 0;\n    for (int {i} = 0; {i} < {a}.length; {i}++) {{\n        {s} += {a}[{i}];\n    }}\n    return {s};\n}}",
    "max": "public static int {f}(int[] {a}) {{\n    int {s} = {a}[0];\n    for (int {i} = 1; {i} < {a}.length; {i}++) {{\n        if ({a}[{i}] > {s}) {{\n            {s} = {a}[{i}];\n        }}\n    }}\n    return {s};\n}}",
    "count": "public int {f}(List<Integer> {a}, int {t}) {{\n    int {s} = 0;\n    for (int {i} : {a}) {{\n        if ({i} == {t}) {{\n            {s}++;\n        }}\n    }}\n    return {s};\n}}",
    "contains": "public boolean {f}(int[] {a}, int {t}) {{\n    for (int {i} = 0; {i} < {a}.length; {i}++) {{\n        if ({a}[{i}] == {t}) {{\n            return true;\n        }}\n    }}\n    return false;\n}}",
    "clamp": "public static int {f}(int {v}, int {lo}, int {hi}) {{\n    return Math.max({lo}, Math.min({hi}, {v}));\n}}",
}
T["c_sharp"] = {
    "sum": "public static int {f}(int[] {a})\n{{\n    int {s} = 0;\n    foreach (var {i} in {a})\n    {{\n        {s} += {i};\n    }}\n    return {s};\n}}",
    "max": "public static int {f}(int[] {a})\n{{\n    int {s} = {a}[0];\n    for (int {i} = 1; {i} < {a}.Length; {i}++)\n    {{\n        if ({a}[{i}] > {s})\n        {{\n            {s} = {a}[{i}];\n        }}\n    }}\n    return {s};\n}}",
    "count": "public int {f}(IEnumerable<int> {a}, int {t})\n{{\n    int {s} = 0;\n    foreach (var {i} in {a})\n    {{\n        if ({i} == {t})\n        {{\n            {s}++;\n        }}\n    }}\n    return {s};\n}}",
    "contains": "public bool {f}(int[] {a}, int {t})\n{{\n    foreach (var {i} in {a})\n    {{\n        if ({i} == {t})\n        {{\n            return true;\n        }}\n    }}\n    return false;\n}}",
    "clamp": "public static int {f}(int {v}, int {lo}, int {hi})\n{{\n    return Math.Max({lo}, Math.Min({hi}, {v}));\n}}",
}
T["go"] = {
    "sum": "func {f}({a} []int) int {{\n\t{s} := 0\n\tfor _, {i} := range {a} {{\n\t\t{s} += {i}\n\t}}\n\treturn {s}\n}}",
    "max": "func {f}({a} []int) int {{\n\t{s} := {a}[0]\n\tfor _, {i} := range {a}[1:] {{\n\t\tif {i} > {s} {{\n\t\t\t{s} = {i}\n\t\t}}\n\t}}\n\treturn {s}\n}}",
    "count": "func {f}({a} []int, {t} int) int {{\n\t{s} := 0\n\tfor _, {i} := range {a} {{\n\t\tif {i} == {t} {{\n\t\t\t{s}++\n\t\t}}\n\t}}\n\treturn {s}\n}}",
    "contains": "func {f}({a} []int, {t} int) bool {{\n\tfor _, {i} := range {a} {{\n\t\tif {i} == {t} {{\n\t\t\treturn true\n\t\t}}\n\t}}\n\treturn false\n}}",
    "clamp": "func {f}({v}, {lo}, {hi} int) int {{\n\tif {v} < {lo} {{\n\t\treturn {lo}\n\t}}\n\tif {v} > {hi} {{\n\t\treturn {hi}\n\t}}\n\treturn {v}\n}}",
}
T["javascript"] = {
    "sum": "function {f}({a}) {{\n  let {s} = 0;\n  for (const {i} of {a}) {{\n    {s} += {i};\n  }}\n  return {s};\n}}",
    "max": "function {f}({a}) {{\n  let {s} = {a}[0];\n  for (let {i} = 1; {i} < {a}.length; {i}++) {{\n    if ({a}[{i}] > {s}) {{\n      {s} = {a}[{i}];\n    }}\n  }}\n  return {s};\n}}",
    "count": "const {f} = ({a}, {t}) => {{\n  return {a}.filter(({i}) => {i} === {t}).length;\n}};",
    "contains": "function {f}({a}, {t}) {{\n  for (let {i} = 0; {i} < {a}.length; {i}++) {{\n    if ({a}[{i}] === {t}) {{\n      return true;\n    }}\n  }}\n  return false;\n}}",
    "clamp": "function {f}({v}, {lo}, {hi}) {{\n  return Math.max({lo}, Math.min({hi}, {v}));\n}}",
}
T["php"] = {
    "sum": "function {f}(${a}) {{\n    ${s} = 0;\n    foreach (${a} as ${i}) {{\n        ${s} += ${i};\n    }}\n    return ${s};\n}}",
    "max": "function {f}(array ${a}) {{\n    ${s} = ${a}[0];\n    foreach (${a} as ${i}) {{\n        if (${i} > ${s}) {{\n            ${s} = ${i};\n        }}\n    }}\n    return ${s};\n}}",
    "count": "function {f}(${a}, ${t}) {{\n    ${s} = 0;\n    foreach (${a} as ${i}) {{\n        if (${i} === ${t}) {{\n            ${s}++;\n        }}\n    }}\n    return ${s};\n}}",
    "contains": "function {f}(${a}, ${t}) {{\n    foreach (${a} as ${i}) {{\n        if (${i} == ${t}) {{\n            return true;\n        }}\n    }}\n    return false;\n}}",
    "clamp": "function {f}(${v}, ${lo}, ${hi}) {{\n    return max(${lo}, min(${hi}, ${v}));\n}}",
}
T["python"] = {
    "sum": "def {f}({a}):\n    {s} = 0\n    for {i} in {a}:\n        {s} += {i}\n    return {s}",
    "max": "def {f}({a}):\n    {s} = {a}[0]\n    for {i} in {a}[1:]:\n        if {i} > {s}:\n            {s} = {i}\n    return {s}",
    "count": "def {f}({a}, {t}):\n    {s} = 0\n    for {i} in {a}:\n        if {i} == {t}:\n            {s} += 1\n    return {s}",
    "contains": "def {f}({a}, {t}):\n    for {i} in {a}:\n        if {i} == {t}:\n            return True\n    return False",
    "clamp": "def {f}({v}, {lo}, {hi}):\n    return max({lo}, min({hi}, {v}))",
}
T["ruby"] = {
    "sum": "def {f}({a})\n  {s} = 0\n  {a}.each do |{i}|\n    {s} += {i}\n  end\n  {s}\nend",
    "max": "def {f}({a})\n  {s} = {a}[0]\n  {a}.each do |{i}|\n    {s} = {i} if {i} > {s}\n  end\n  {s}\nend",
    "count": "def {f}({a}, {t})\n  {a}.count {{ |{i}| {i} == {t} }}\nend",
    "contains": "def {f}({a}, {t})\n  {a}.each do |{i}|\n    return true if {i} == {t}\n  end\n  false\nend",
    "clamp": "def {f}({v}, {lo}, {hi})\n  [[{v}, {lo}].max, {hi}].min\nend",
}

COUNTS = {"mini": 40, "java": 25, "python": 25, "go": 20, "javascript": 20,
          "php": 20, "ruby": 20, "c": 15, "c_sharp": 15}


def snake(name):
    out = []
    for ch in name:
        if ch.isupper():
            out.append("_" + ch.lower())
        else:
            out.append(ch)
    return "".join(out)


def main():
    rng = random.Random(20210915)
    records = []
    for lang, count in COUNTS.items():
        for _ in range(count):
            kind = rng.choice(sorted(FUNCS))
            lo, hi = rng.choice(LOW_HIGH)
            names = {
                "f": rng.choice(FUNCS[kind]),
                "a": rng.choice(ARRAYS),
                "s": rng.choice(SCALARS),
                "i": rng.choice(INDICES),
                "t": rng.choice(TARGETS),
                "v": rng.choice(["value", "x", "v", "input"]),
                "lo": lo,
                "hi": hi,
            }
            if lang in ("python", "ruby"):
                names["f"] = snake(names["f"])
            code = T[lang][kind].format(**names)
            rec = {"code": code, "language": lang}
            if rng.random() < 0.75:
                rec["docstring"] = rng.choice(DOCS[kind]).format(a=names["a"], t=names["t"], v=names["v"])
            records.append(rec)
    rng.shuffle(records)
    out = open(sys.argv[1], "w") if len(sys.argv) > 1 else sys.stdout
    for rec in records:
        out.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
