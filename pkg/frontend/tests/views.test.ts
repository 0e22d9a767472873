import { describe, expect, it } from "vitest";

import { escapeHtml, miniMarkdown, renderDag, renderValidation } from "../src/views.js";
import { layoutGraph } from "../src/dag.js";
import type { DocumentGraph } from "../src/types.js";

describe("escaping", () => {
  it("escapes markup in untrusted text", () => {
    expect(escapeHtml(`<script>"&'`)).toBe("&lt;script&gt;&quot;&amp;'");
  });

  it("renders bold and code without leaking tags", () => {
    const html = miniMarkdown("Server **{S}** runs `cmd` <img>");
    expect(html).toContain("<strong>{S}</strong>");
    expect(html).toContain("<code>cmd</code>");
    expect(html).not.toContain("<img>");
  });
});

describe("validation panel", () => {
  it("shows error and warning entries", () => {
    const html = renderValidation(
      {
        ok: false,
        errors: [{ code: "cycle", scope: "a", message: "cycle: a → b → a" }],
        warnings: [{ code: "unreachable-step", scope: "x", message: "unreachable" }],
      },
      false,
    );
    expect(html).toContain("1 error(s)");
    expect(html).toContain("cycle: a → b → a");
    expect(html).toContain("unreachable");
  });

  it("shows a pending badge while dirty", () => {
    const html = renderValidation({ ok: true, errors: [], warnings: [] }, true);
    expect(html).toContain("validating…");
  });
});

describe("dag svg", () => {
  it("renders one rect per node and a badge on filtered edges", () => {
    const graph: DocumentGraph = {
      nodes: [
        { name: "trigger[0]", kind: "trigger", audiences: [], required_keys: [] },
        {
          name: "warn",
          kind: "explanation",
          audiences: [],
          filter: "{A} > 1",
          required_keys: ["A"],
        },
      ],
      edges: [{ from: "trigger[0]", to: "warn" }],
    };
    const svg = renderDag(layoutGraph(graph));
    expect(svg.match(/<rect/g)).toHaveLength(2);
    expect(svg).toContain("filter");
    expect(svg).toContain("trigger[0]");
  });
});
