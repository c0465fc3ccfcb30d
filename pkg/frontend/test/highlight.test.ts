import { describe, expect, it } from "vitest";

import { replacementSegments, sharedTermSegments } from "../src/highlight.js";
import type { ReplacementRecord } from "../src/types.js";

describe("replacementSegments", () => {
  it("splits around a single replacement", () => {
    const raw = "beacons to 10.20.30.40 now";
    const reps: ReplacementRecord[] = [
      { span: [11, 22], class: "ip_address", literal: "10.20.30.40" },
    ];
    expect(replacementSegments(raw, reps)).toEqual([
      { text: "beacons to " },
      { text: "10.20.30.40", iocClass: "ip_address" },
      { text: " now" },
    ]);
  });

  it("handles byte offsets over multibyte text", () => {
    // "căutați" is 9 UTF-8 bytes; the ip literal starts at byte 10
    const raw = "căutați 10.20.30.40 aici";
    const reps: ReplacementRecord[] = [
      { span: [10, 21], class: "ip_address", literal: "10.20.30.40" },
    ];
    const segments = replacementSegments(raw, reps);
    expect(segments.map((s) => s.text)).toEqual(["căutați ", "10.20.30.40", " aici"]);
    expect(segments[1]?.iocClass).toBe("ip_address");
  });

  it("concatenation reproduces the raw text", () => {
    const raw = "x 1.2.3.4 y emoji 🎯 z C:\\tmp\\a.exe end";
    const bytes = new TextEncoder().encode(raw);
    const find = (literal: string): [number, number] => {
      const target = new TextEncoder().encode(literal);
      outer: for (let i = 0; i + target.length <= bytes.length; i++) {
        for (let j = 0; j < target.length; j++) {
          if (bytes[i + j] !== target[j]) continue outer;
        }
        return [i, i + target.length];
      }
      throw new Error("literal not found");
    };
    const reps: ReplacementRecord[] = [
      { span: find("1.2.3.4"), class: "ip_address", literal: "1.2.3.4" },
      { span: find("C:\\tmp\\a.exe"), class: "file_path", literal: "C:\\tmp\\a.exe" },
    ];
    const segments = replacementSegments(raw, reps);
    expect(segments.map((s) => s.text).join("")).toBe(raw);
  });

  it("no replacements yields one plain segment", () => {
    expect(replacementSegments("nothing here", [])).toEqual([{ text: "nothing here" }]);
  });
});

describe("sharedTermSegments", () => {
  it("marks words shared with the query", () => {
    const segments = sharedTermSegments(
      "Query: scheduled task Document: abuse task scheduling",
      "persistence with a scheduled task",
    );
    const marked = segments.filter((s) => s.shared).map((s) => s.text);
    expect(marked).toContain("scheduled");
    expect(marked).toContain("task");
    expect(marked).not.toContain("abuse");
  });

  it("ignores short words", () => {
    const segments = sharedTermSegments("go to it", "go to it");
    expect(segments.every((s) => !s.shared)).toBe(true);
  });

  it("concatenation reproduces the snippet", () => {
    const snippet = "Query: a, b; c -- the end.";
    const joined = sharedTermSegments(snippet, "anything")
      .map((s) => s.text)
      .join("");
    expect(joined).toBe(snippet);
  });

  it("matching is case-insensitive", () => {
    const segments = sharedTermSegments("PowerShell Script", "powershell script");
    expect(segments.filter((s) => s.shared).map((s) => s.text)).toEqual([
      "PowerShell",
      "Script",
    ]);
  });
});
