import init, { bsceSelect, attentionMaps, chatPreview } from "./pkg/chatmt_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

const SAMPLE_CHAT = [
  ["customer", "Hallo , meine Bestellung ist nicht angekommen .", "Hello , my order has not arrived ."],
  ["agent", "I am sorry to hear that . Can you give me the order number ?", "Das tut mir leid . Können Sie mir die Bestellnummer geben ?"],
  ["customer", "Die Nummer ist 4711 .", "The number is 4711 ."],
  ["agent", "Thank you . The parcel is delayed by two days .", "Danke . Das Paket verspätet sich um zwei Tage ."],
].map(([speaker, src, tgt], i) => JSON.stringify({
  dialogue_id: "d001",
  turn_index: i,
  speaker,
  src_text: src,
  tgt_text: tgt,
  src_lang: speaker === "agent" ? "en" : "de",
  tgt_lang: speaker === "agent" ? "de" : "en",
})).join("\n");

function runBsce() {
  try {
    const out = JSON.parse(bsceSelect($("scores").value, num("ensemble")));
    $("bsce-out").textContent = JSON.stringify(out, null, 2);
    $("bsce-out").classList.remove("error");
  } catch (e) {
    $("bsce-out").textContent = e.message ?? String(e);
    $("bsce-out").classList.add("error");
  }
}

function drawMap(rows, label) {
  const cell = 8;
  const canvas = document.createElement("canvas");
  canvas.width = rows[0].length * cell;
  canvas.height = rows.length * cell;
  const ctx = canvas.getContext("2d");
  const max = Math.max(...rows.flat(), 1e-12);
  rows.forEach((row, i) => row.forEach((v, j) => {
    const shade = Math.round(255 * (1 - Math.max(0, v) / max));
    ctx.fillStyle = `rgb(${shade},${shade},255)`;
    ctx.fillRect(j * cell, i * cell, cell, cell);
  }));
  const fig = document.createElement("figure");
  fig.append(canvas, Object.assign(document.createElement("figcaption"), { textContent: label }));
  return fig;
}

function runAttention() {
  $("attn-err").textContent = "";
  try {
    const maps = JSON.parse(attentionMaps(num("a-seed"), num("a-heads"), num("a-len"), num("a-dim"), num("a-mix")));
    $("attn-std").replaceChildren(...maps.standard.map((m, h) => drawMap(m, `head ${h}`)));
    $("attn-th").replaceChildren(...maps.talking.map((m, h) => drawMap(m, `mixed ${h}`)));
  } catch (e) {
    $("attn-err").textContent = e.message ?? String(e);
  }
}

function diffTokens(before, after) {
  const a = before.split(" ");
  const b = after.split(" ");
  return b.map((tok, i) => (tok === a[i] ? tok : `<del>${a[i]}</del><ins>${tok}</ins>`)).join(" ");
}

function escape(s) {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function runChat() {
  $("chat-err").textContent = "";
  try {
    const rows = JSON.parse(chatPreview(
      $("chat-in").value, num("c-nprev"), $("c-mode").value, $("c-tags").checked,
      num("c-seed"), num("c-frac"), num("c-prob"),
    ));
    const table = $("chat-out");
    table.innerHTML = "<tr><td>turn</td><td>source</td><td>target (noised)</td></tr>";
    for (const r of rows) {
      const tr = table.insertRow();
      tr.insertCell().textContent = `${r.dialogue_id}/${r.turn_index}`;
      tr.insertCell().textContent = r.source;
      tr.insertCell().innerHTML = diffTokens(escape(r.target), escape(r.noised_target));
    }
  } catch (e) {
    $("chat-err").textContent = e.message ?? String(e);
  }
}

await init();
$("chat-in").value = SAMPLE_CHAT;
$("run-bsce").addEventListener("click", runBsce);
$("run-chat").addEventListener("click", runChat);
for (const id of ["a-seed", "a-heads", "a-len", "a-dim", "a-mix"]) {
  $(id).addEventListener("input", runAttention);
}
runBsce();
runAttention();
runChat();
