import { Studio } from "./studio.js";

const base =
  new URLSearchParams(location.search).get("service") ??
  `${location.protocol}//${location.host}`;

const studio = new Studio(document.body, base);
studio.start().catch((err) => {
  const banner = document.querySelector("#banner") as HTMLElement;
  banner.textContent = `cannot reach service: ${err}`;
  banner.style.display = "";
});
