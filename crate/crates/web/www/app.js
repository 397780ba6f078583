import init, { condense_markdown, pack_markdown, rerank_markdown } from "./pkg/ddrill_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const out = $("out");

function show(render) {
  out.classList.remove("error");
  try {
    out.textContent = render();
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e);
  }
}

function condensed() {
  const r = JSON.parse(condense_markdown($("doc").value, num("budget")));
  return `${r.full_tokens} tokens of text, ${r.condensed_tokens} condensed\n\n${r.rendered}`;
}

function packed() {
  const calls = JSON.parse(pack_markdown($("doc").value, num("call-budget"), num("overhead")));
  const lines = calls.map((c, i) =>
    `call ${i + 1}: paragraphs ${c.ids.join(", ")} (${c.token_count} tokens${c.truncated ? ", truncated" : ""})`);
  return `${calls.length} calls\n${lines.join("\n")}`;
}

function reranked() {
  const ranked = JSON.parse(rerank_markdown($("doc").value, $("question").value, num("k")));
  return ranked.map((r) => `[${r.id}] ${r.score.toFixed(3)}  ${r.section}\n    ${r.text}`).join("\n");
}

await init();
$("condense").onclick = () => show(condensed);
$("pack").onclick = () => show(packed);
$("rerank").onclick = () => show(reranked);
