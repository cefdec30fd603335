import { ApiClient } from "./api.js";
import { startApp } from "./app.js";

declare global {
  interface Window {
    RECOMBKB_API?: string;
  }
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
// Same-origin by default; override via window.RECOMBKB_API before loading.
startApp(root, new ApiClient(window.RECOMBKB_API ?? ""), window);
