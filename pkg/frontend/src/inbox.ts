/**
 * Job inbox: the live list of (item, activity, transition) offers for the
 * logged-in agent. Selecting an outcome-bearing job loads its schema and
 * produces a form model; executing refreshes the list. A job that another
 * session took meanwhile comes back as IllegalTransition: the inbox
 * refreshes itself and reports the job as stale.
 */

import { ApiClient, ApiError, JobEntry } from "./api.js";
import { FormModel, renderOutcomeForm } from "./form.js";

export class StaleJobError extends Error {
  constructor(readonly job: JobEntry) {
    super(`job ${job.activity}/${job.transition} on ${job.item_name} was taken`);
  }
}

export interface OpenedJob {
  job: JobEntry;
  /** null when the transition needs no outcome (plain confirm action). */
  form: FormModel | null;
}

export class JobInbox {
  jobs: JobEntry[] = [];

  constructor(readonly api: ApiClient,
              readonly filter: { item?: string; prefix?: string } = {}) {}

  async refresh(): Promise<JobEntry[]> {
    this.jobs = await this.api.jobs(this.filter);
    return this.jobs;
  }

  /** Load what executing this job needs: a form when it takes an outcome. */
  async open(job: JobEntry): Promise<OpenedJob> {
    if (!job.outcome_schema) return { job, form: null };
    const [schemaName, version] = job.outcome_schema;
    const document = await this.api.description("schema", schemaName,
                                                String(version));
    return { job, form: renderOutcomeForm(document) };
  }

  /**
   * Execute a job and refresh. Losing a race surfaces as StaleJobError
   * with the list already refreshed.
   */
  async execute(job: JobEntry, outcome?: string): Promise<void> {
    try {
      await this.api.execute(job.item_id, job.activity, job.transition, outcome);
    } catch (error) {
      if (error instanceof ApiError && error.code === "IllegalTransition") {
        await this.refresh();
        throw new StaleJobError(job);
      }
      throw error;
    }
    await this.refresh();
  }
}
