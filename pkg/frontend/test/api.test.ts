import { describe, expect, it } from "vitest";

import { ApiError, Client, type FetchLike } from "../src/api.js";
import { SLICE } from "./fixtures.js";

function mockFetch(
  routes: Record<string, { status: number; body: unknown }>,
  calls: { url: string; body?: string }[],
): FetchLike {
  return async (url, init) => {
    calls.push({ url, body: init?.body });
    const hit = routes[url];
    if (!hit) throw new Error(`unexpected request ${url}`);
    return { status: hit.status, json: async () => hit.body };
  };
}

describe("service client", () => {
  it("posts slice requests to the trace endpoint", async () => {
    const calls: { url: string; body?: string }[] = [];
    const client = new Client(
      "http://api",
      mockFetch({ "http://api/api/trace/t0/slice": { status: 200, body: SLICE } }, calls),
    );
    const doc = await client.slice("t0", 3, "B(?, _)");
    expect(doc).toEqual(SLICE);
    expect(calls).toHaveLength(1);
    expect(JSON.parse(calls[0].body!)).toEqual({
      state_index: 3,
      pattern: "B(?, _)",
    });
  });

  it("surfaces structured server errors with their code", async () => {
    const calls: { url: string; body?: string }[] = [];
    const client = new Client(
      "",
      mockFetch(
        {
          "/api/trace/nope": {
            status: 404,
            body: { error: { code: "not-found", message: "no stored trace nope" } },
          },
        },
        calls,
      ),
    );
    await expect(client.traceMeta("nope")).rejects.toThrowError(ApiError);
    await expect(client.traceMeta("nope")).rejects.toMatchObject({
      code: "not-found",
      status: 404,
    });
  });
});
