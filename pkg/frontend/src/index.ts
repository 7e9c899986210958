export { ApiClient, ApiError } from "./api.js";
export type { EventEntry, ItemSummary, JobEntry } from "./api.js";
export { JobInbox, StaleJobError } from "./inbox.js";
export type { OpenedJob } from "./inbox.js";
export {
  buildDocument,
  clientAccepts,
  renderOutcomeForm,
  validateValues,
} from "./form.js";
export type { FieldModel, FormModel, FormValues, Widget } from "./form.js";
export {
  MalformedSchema,
  parseSchema,
  validateDocument,
  validateOutcome,
} from "./schema.js";
export {
  STATE_COLORS,
  collectionPanel,
  historyView,
  itemBrowser,
  propertyPanel,
  workflowView,
} from "./browser.js";
export {
  readFormValues,
  renderFormHtml,
  renderHistoryHtml,
  renderPropertiesHtml,
  renderWorkflowHtml,
} from "./dom.js";
export { parseXml, serializeXml, tryParseXml } from "./xml.js";
export type { XmlElement } from "./xml.js";
