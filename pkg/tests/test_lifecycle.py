"""
子目标生命周期与计划合并测试
"""

import unittest
import os

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from hypothesis import given, settings, strategies as st

from src.core.errors import IllegalTransition, PreconditionViolation
from src.core.lifecycle import (
    TRANSITIONS, apply_event, build_plan, merge_replan, start_next, transition_subgoal, validate_plan,
)
from src.core.models import LifecycleEvent, Plan, Subgoal, SubgoalStatus

S = SubgoalStatus
E = LifecycleEvent


def _plan(*ids, statuses=None):
    statuses = statuses or {}
    return build_plan(Subgoal(i, f"step {i}", statuses.get(i, S.PENDING)) for i in ids)


class TestTransitions(unittest.TestCase):

    def test_happy_path(self):
        """Pending → InProgress → Completed"""
        status = transition_subgoal(S.PENDING, E.START)
        self.assertEqual(status, S.IN_PROGRESS)
        self.assertEqual(transition_subgoal(status, E.CONFIRM_COMPLETE), S.COMPLETED)

    def test_failure_path(self):
        self.assertEqual(transition_subgoal(S.IN_PROGRESS, E.MARK_FAILED), S.FAILED)

    def test_reset_on_replan(self):
        self.assertEqual(transition_subgoal(S.PENDING, E.RESET_ON_REPLAN), S.PENDING)
        self.assertEqual(transition_subgoal(S.IN_PROGRESS, E.RESET_ON_REPLAN), S.PENDING)

    def test_terminal_states_are_final(self):
        """Completed 与 Failed 不接受任何事件"""
        for status in (S.COMPLETED, S.FAILED):
            for event in E:
                with self.assertRaises(IllegalTransition) as ctx:
                    transition_subgoal(status, event)
                self.assertEqual(ctx.exception.current, status)
                self.assertEqual(ctx.exception.event, event)

    def test_pending_cannot_complete(self):
        with self.assertRaises(IllegalTransition):
            transition_subgoal(S.PENDING, E.CONFIRM_COMPLETE)

    def test_unknown_event(self):
        with self.assertRaises(PreconditionViolation):
            transition_subgoal(S.PENDING, "Start")

    @given(st.sampled_from(list(S)), st.sampled_from(list(E)))
    def test_table_is_total(self, status, event):
        """表内组合返回表中结果，其余组合一律抛出"""
        if (status, event) in TRANSITIONS:
            self.assertEqual(transition_subgoal(status, event), TRANSITIONS[(status, event)])
        else:
            with self.assertRaises(IllegalTransition):
                transition_subgoal(status, event)

    @settings(max_examples=200)
    @given(st.lists(st.sampled_from(list(E)), max_size=8))
    def test_completed_never_regresses(self, events):
        """任意事件序列下，Completed 之后不会再出现其他状态"""
        status = S.PENDING
        seen_completed = False
        for event in events:
            try:
                status = transition_subgoal(status, event)
            except IllegalTransition:
                continue
            if seen_completed:
                self.fail("Completed 之后仍发生了转换")
            seen_completed = status == S.COMPLETED


class TestPlanOperations(unittest.TestCase):

    def test_build_plan_rejects_duplicates(self):
        with self.assertRaises(PreconditionViolation):
            build_plan([Subgoal("a", "x"), Subgoal("a", "y")])

    def test_start_next(self):
        plan = start_next(_plan("a", "b"))
        self.assertEqual(plan.active().id, "a")
        # 已有进行中的子目标时不变
        self.assertIs(start_next(plan), plan)

    def test_start_next_when_all_done(self):
        plan = _plan("a", statuses={"a": S.COMPLETED})
        self.assertIs(start_next(plan), plan)
        self.assertTrue(plan.all_completed())

    def test_apply_event_unknown_subgoal(self):
        with self.assertRaises(PreconditionViolation):
            apply_event(_plan("a"), "zzz", E.START)

    def test_apply_event_keeps_revision(self):
        plan = apply_event(_plan("a"), "a", E.START)
        self.assertEqual(plan.get("a").status, S.IN_PROGRESS)
        self.assertEqual(plan.revision, 0)

    def test_validate_plan(self):
        plan = Plan((Subgoal("a", "x", S.IN_PROGRESS), Subgoal("a", " ", S.IN_PROGRESS)))
        kinds = sorted(issue.kind for issue in validate_plan(plan).issues)
        self.assertEqual(kinds, ["DuplicateId", "EmptyDescription", "MultipleActive"])
        self.assertTrue(validate_plan(_plan("a", "b")).valid)

    def test_empty_plan_is_not_completed(self):
        self.assertFalse(build_plan([]).all_completed())

    def test_render(self):
        plan = start_next(_plan("a"))
        self.assertEqual(plan.render(), "- [InProgress] a: step a")


class TestMergeReplan(unittest.TestCase):

    def test_completed_kept_and_proposals_appended(self):
        old = _plan("a", "b", "c", statuses={"a": S.COMPLETED, "b": S.FAILED})
        merged = merge_replan(old, [Subgoal("d", "new"), Subgoal("e", "newer")])

        self.assertEqual(merged.ids(), ("a", "d", "e"))
        self.assertEqual(merged.get("a").status, S.COMPLETED)
        self.assertEqual(merged.revision, old.revision + 1)

    def test_completed_id_proposal_ignored(self):
        old = _plan("a", statuses={"a": S.COMPLETED})
        merged = merge_replan(old, [Subgoal("a", "redo a"), Subgoal("b", "next")])

        self.assertEqual(merged.ids(), ("a", "b"))
        self.assertEqual(merged.get("a").description, "step a")

    def test_in_progress_is_reset(self):
        old = _plan("a", "b", statuses={"a": S.IN_PROGRESS})
        merged = merge_replan(old, [Subgoal("a", "retry a"), Subgoal("b", "then b")])

        self.assertEqual(merged.get("a").status, S.PENDING)
        self.assertIsNone(merged.active())

    def test_failed_reappears_as_new_instance(self):
        old = _plan("a", statuses={"a": S.FAILED})
        merged = merge_replan(old, [Subgoal("a", "try again")])

        self.assertEqual(merged.get("a").status, S.PENDING)
        self.assertEqual(merged.get("a").description, "try again")

    @given(st.lists(st.sampled_from(list(S)), min_size=1, max_size=6),
           st.lists(st.sampled_from("abcdefgh"), max_size=6, unique=True))
    def test_completed_survive_any_replan(self, statuses, proposal_ids):
        """已完成的子目标在任意重规划后仍然存在且保持顺序"""
        ids = [f"s{i}" for i in range(len(statuses))]
        old = build_plan(Subgoal(i, f"step {i}", s) for i, s in zip(ids, statuses))
        merged = merge_replan(old, [Subgoal(p, f"proposal {p}") for p in proposal_ids])

        completed = [sg.id for sg in old.subgoals if sg.status == S.COMPLETED]
        self.assertEqual([sg.id for sg in merged.subgoals][:len(completed)], completed)
        self.assertTrue(validate_plan(merged).valid)
        self.assertEqual(merged.revision, 1)


if __name__ == '__main__':
    unittest.main()
